use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    /// Slot duration in seconds.
    pub tau: f64,
    /// Path curvature (1/m) produced by full steer.
    pub k_s: f64,
    /// Acceleration (m/s²) produced by full throttle.
    pub k_a: f64,
    pub v_max: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        VehicleConfig {
            tau: 0.05,
            k_s: 0.15,
            k_a: 4.0,
            v_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub steer: f64,
    pub accel: f64,
}

impl Command {
    /// Clamps both components to `[-1, 1]`; NaN becomes 0.
    pub fn new(steer: f64, accel: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Command {
            steer: c(steer),
            accel: c(accel),
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.steer, self.accel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldState {
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub slot: u64,
}

impl WorldState {
    /// World point expressed in this state's ego frame (x forward, y left).
    pub fn to_ego(&self, p: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (p[0] - self.position[0], p[1] - self.position[1]);
        let (c, s) = (self.heading.cos(), self.heading.sin());
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Rotates a world-frame vector into the ego frame.
    pub fn to_ego_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }
}

/// Unicycle update. Steering sets path curvature, so the heading change per
/// slot scales with the distance travelled.
pub fn step(state: &WorldState, command: Command, vehicle: &VehicleConfig) -> WorldState {
    let cmd = Command::new(command.steer, command.accel);
    let tau = vehicle.tau;
    let heading = state.heading + cmd.steer * vehicle.k_s * state.speed * tau;
    let speed = (state.speed + cmd.accel * vehicle.k_a * tau).clamp(0.0, vehicle.v_max);
    WorldState {
        position: [
            state.position[0] + speed * tau * heading.cos(),
            state.position[1] + speed * tau * heading.sin(),
        ],
        heading,
        speed,
        slot: state.slot + 1,
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_vehicle_only_advances_the_clock() {
        let s = WorldState {
            position: [3.0, -1.0],
            heading: 0.4,
            speed: 0.0,
            slot: 7,
        };
        let n = step(&s, Command::default(), &VehicleConfig::default());
        assert_eq!(n, WorldState { slot: 8, ..s });
    }

    #[test]
    fn full_throttle_from_rest() {
        let v = VehicleConfig::default();
        let mut s = WorldState::default();
        for n in 1..=60u32 {
            s = step(&s, Command::new(0.0, 1.0), &v);
            let want = (n as f64 * v.k_a * v.tau).min(v.v_max);
            assert!((s.speed - want).abs() < 1e-12);
        }
    }

    #[test]
    fn command_is_clamped() {
        assert_eq!(Command::new(3.0, -7.0), Command { steer: 1.0, accel: -1.0 });
        assert_eq!(Command::new(f64::NAN, 0.5).steer, 0.0);
    }

    #[test]
    fn ego_frame_is_left_positive() {
        let s = WorldState {
            position: [1.0, 1.0],
            heading: std::f64::consts::FRAC_PI_2,
            ..Default::default()
        };
        let e = s.to_ego([0.0, 1.0]);
        assert!(e[0].abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -3.2, 0.0, 3.2, 10.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert!(((a - w) / std::f64::consts::TAU).fract().abs() < 1e-9 || ((a - w) / std::f64::consts::TAU).fract().abs() > 1.0 - 1e-9);
        }
    }
}
