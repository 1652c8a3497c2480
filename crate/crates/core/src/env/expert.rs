//! Scripted expert: pure-pursuit steering on the route centreline plus PID
//! speed tracking of the route speed profile, capped when an obstacle is in
//! or about to enter the lane ahead.

use super::episode::Scene;
use super::render::Obstacle;
use super::route::{Route, SegmentLabel};
use super::world::{step, Command, VehicleConfig, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Look-ahead distance per m/s of speed.
    pub lookahead_gain: f64,
    pub lookahead_min: f64,
    pub v_cruise: f64,
    pub v_turn: f64,
    /// Distance ahead over which the speed profile is anticipated.
    pub brake_distance: f64,
    pub speed_kp: f64,
    pub speed_ki: f64,
    pub speed_kd: f64,
    /// Obstacles further ahead than this are ignored.
    pub yield_distance: f64,
    /// Half width of the corridor checked ahead of the ego.
    pub yield_half_width: f64,
    /// Standstill gap to a blocking obstacle.
    pub yield_gap: f64,
    /// Speed cap is `(distance − gap) / headway`.
    pub yield_headway: f64,
    /// How far ahead in time obstacle motion is anticipated (s).
    pub yield_anticipation: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lookahead_gain: 1.6,
            lookahead_min: 4.0,
            v_cruise: 5.0,
            v_turn: 4.0,
            brake_distance: 6.0,
            speed_kp: 0.8,
            speed_ki: 0.05,
            speed_kd: 0.0,
            yield_distance: 18.0,
            yield_half_width: 1.6,
            yield_gap: 3.5,
            yield_headway: 0.9,
            yield_anticipation: 1.0,
        }
    }
}

impl ExpertConfig {
    pub fn profile_speed(&self, route: &Route, s: f64) -> f64 {
        match route.label_at(s) {
            SegmentLabel::Straight => self.v_cruise,
            _ => self.v_turn,
        }
    }

    /// Lowest profile speed over the next `brake_distance` metres.
    pub fn target_speed(&self, route: &Route, s: f64) -> f64 {
        let n = self.brake_distance.ceil() as usize;
        (0..=n)
            .map(|k| self.profile_speed(route, s + k as f64))
            .fold(f64::INFINITY, f64::min)
    }

    /// Speed cap from obstacles that occupy, or will occupy by the time the
    /// ego gets there, the lane ahead along the route. Infinite when the way
    /// is clear.
    pub fn yield_speed(&self, state: &WorldState, route: &Route, progress: f64, obstacles: &[Obstacle], tau: f64) -> f64 {
        const MAX_ANTICIPATION: f64 = 4.0;
        let (lo, hi) = (progress, progress + self.yield_distance);
        let mut cap = f64::INFINITY;
        for o in obstacles {
            let p = o.position(state.slot, tau);
            let dist = (p[0] - state.position[0]).hypot(p[1] - state.position[1]);
            if dist > self.yield_distance + 5.0 {
                continue;
            }
            let now = route.project_window(p, lo, hi);
            let ahead = now.s - progress;
            if ahead <= 0.0 || ahead >= self.yield_distance {
                continue;
            }
            let horizon = (ahead / state.speed.max(1.0) + self.yield_anticipation).min(MAX_ANTICIPATION);
            let later = route.project_window(o.position(state.slot + (horizon / tau).round() as u64, tau), lo, hi);
            let lane = self.yield_half_width + o.radius;
            let crosses = now.cte.signum() != later.cte.signum() && now.cte.abs().max(later.cte.abs()) < 3.0 * lane;
            if now.cte.abs() < lane || later.cte.abs() < lane || crosses {
                cap = cap.min(((ahead - self.yield_gap) / self.yield_headway).max(0.0));
            }
        }
        cap
    }
}

/// Integral/derivative memory of the speed loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpertController {
    integral: f64,
    prev_error: Option<f64>,
}

impl ExpertController {
    pub fn command(
        &mut self,
        state: &WorldState,
        scene: &Scene,
        progress: f64,
        cfg: &ExpertConfig,
        vehicle: &VehicleConfig,
    ) -> Command {
        let route = &scene.route;
        let lookahead = (cfg.lookahead_gain * state.speed).max(cfg.lookahead_min);
        let (target, _) = route.pose_at(progress + lookahead);
        let e = state.to_ego(target);
        let d = e[0].hypot(e[1]);
        let steer = if d > 1e-9 {
            let alpha = e[1].atan2(e[0]);
            2.0 * alpha.sin() / d / vehicle.k_s
        } else {
            0.0
        };

        let target = cfg.target_speed(route, progress).min(cfg.yield_speed(state, route, progress, &scene.obstacles, vehicle.tau));
        let err = target - state.speed;
        self.integral = (self.integral + err * vehicle.tau).clamp(-5.0, 5.0);
        let deriv = self.prev_error.map_or(0.0, |p| (err - p) / vehicle.tau);
        self.prev_error = Some(err);
        let accel = cfg.speed_kp * err + cfg.speed_ki * self.integral + cfg.speed_kd * deriv;
        Command::new(steer, accel)
    }
}

/// One noise-free expert rollout step: command, next state, next progress.
pub fn expert_step(
    ctl: &mut ExpertController,
    state: &WorldState,
    scene: &Scene,
    progress: f64,
    cfg: &ExpertConfig,
    vehicle: &VehicleConfig,
) -> (Command, WorldState, f64) {
    let cmd = ctl.command(state, scene, progress, cfg, vehicle);
    let route = &scene.route;
    let next = step(state, cmd, vehicle);
    let proj = route.project_window(next.position, progress - 2.0, progress + 5.0);
    (cmd, next, proj.s.max(progress))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_holds_a_straight_lane() {
        let vehicle = VehicleConfig::default();
        let cfg = ExpertConfig::default();
        let scene = lane(400.0, Vec::new());
        let route = &scene.route;
        let mut state = WorldState {
            speed: 5.0,
            ..Default::default()
        };
        let mut ctl = ExpertController::default();
        let mut s = 0.0;
        for _ in 0..500 {
            let (_, next, ns) = expert_step(&mut ctl, &state, &scene, s, &cfg, &vehicle);
            state = next;
            s = ns;
            assert!(route.project(state.position).cte.abs() < 0.1);
        }
    }

    #[test]
    fn steering_is_left_positive() {
        let vehicle = VehicleConfig::default();
        let scene = lane(100.0, Vec::new());
        let state = WorldState {
            position: [0.0, -1.0],
            speed: 5.0,
            ..Default::default()
        };
        let cmd = ExpertController::default().command(&state, &scene, 0.0, &ExpertConfig::default(), &vehicle);
        assert!(cmd.steer > 0.0);
    }

    fn lane(length: f64, obstacles: Vec<Obstacle>) -> Scene {
        Scene {
            route_id: 0,
            route: Route::straight(length, 40.0, 0.5),
            obstacles,
        }
    }

    fn walker(x: f64, y: f64, vy: f64) -> Obstacle {
        Obstacle {
            start: [x, y],
            velocity: [0.0, vy],
            radius: 0.6,
        }
    }

    #[test]
    fn yield_cap_depends_on_corridor_and_motion() {
        let cfg = ExpertConfig::default();
        let state = WorldState {
            speed: 5.0,
            ..Default::default()
        };
        let route = Route::straight(100.0, 40.0, 0.5);
        let cap = |o: Obstacle| cfg.yield_speed(&state, &route, 0.0, &[o], 0.05);
        assert!(cap(walker(30.0, 0.0, 0.0)).is_infinite(), "beyond range");
        assert!(cap(walker(-2.0, 0.0, 0.0)).is_infinite(), "behind");
        assert!(cap(walker(10.0, 5.0, 0.0)).is_infinite(), "roadside");
        assert!((cap(walker(10.0, 0.0, 0.0)) - (10.0 - 3.5) / 0.9).abs() < 1e-12);
        assert!(cap(walker(10.0, 3.0, -1.2)).is_finite(), "entering");
        assert!(cap(walker(10.0, 4.0, -1.2)).is_finite(), "entering before the ego arrives");
        assert!(cap(walker(10.0, 2.5, 1.2)).is_infinite(), "leaving");
        assert_eq!(cap(walker(2.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn expert_stops_short_of_a_standing_walker() {
        let vehicle = VehicleConfig::default();
        let cfg = ExpertConfig::default();
        let scene = lane(200.0, vec![walker(40.0, 0.0, 0.0)]);
        let mut state = WorldState {
            speed: 5.0,
            ..Default::default()
        };
        let mut ctl = ExpertController::default();
        let mut s = 0.0;
        for _ in 0..400 {
            let (_, next, ns) = expert_step(&mut ctl, &state, &scene, s, &cfg, &vehicle);
            state = next;
            s = ns;
        }
        assert!(state.position[0] < 40.0 - 0.6 - 0.9, "{:?}", state.position);
        assert!(state.speed < 0.2);
    }
}
