//! Synthetic 2-D driving world: routes, vehicle dynamics, raster
//! observations, the scripted expert and its labels, dataset generation and
//! the desk driving score.

mod dataset;
mod episode;
mod expert;
mod render;
mod route;
mod trace;
mod world;

pub use dataset::{collect_dataset, generate_dataset, DataConfig, Dataset, DatasetHeader, Record};
pub use episode::{expert_action, run_expert_episode, EndReason, Episode, Scene};
pub use expert::{expert_step, ExpertConfig, ExpertController};
pub use render::{render, Obstacle, Observation, RenderConfig, Weather, RASTER_C, RASTER_H, RASTER_W};
pub use route::{Projection, Route, RouteConfig, SegmentLabel};
pub use trace::{score, EpisodeTrace, IssuedCommand, SlotRecord};
pub use world::{step, wrap_angle, Command, VehicleConfig, WorldState};

use crate::numerics::RngStream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Width of the trajectory teacher feature.
pub const TRAJ_FEATURE_DIM: usize = 64;
/// Width of each control teacher feature.
pub const CTRL_FEATURE_DIM: usize = 32;
/// Width of the privileged scene summary behind the teacher features.
pub const PRIVILEGED_DIM: usize = 16;
/// Control dimensions: steer, accel.
pub const CONTROL_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleConfig {
    pub count: usize,
    pub lateral_offset: f64,
    pub radius: f64,
    pub max_speed: f64,
    /// No obstacles are placed closer than this to the start.
    pub start_margin: f64,
    /// Pedestrians crossing the road; the expert yields to them.
    pub crossing: usize,
    pub crossing_speed: f64,
    /// Spread (s) of the crossing time around the nominal arrival of the ego.
    pub crossing_jitter: f64,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        ObstacleConfig {
            count: 6,
            lateral_offset: 3.5,
            radius: 0.6,
            max_speed: 0.0,
            start_margin: 15.0,
            crossing: 4,
            crossing_speed: 1.2,
            crossing_jitter: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub vehicle: VehicleConfig,
    pub route: RouteConfig,
    pub render: RenderConfig,
    pub expert: ExpertConfig,
    pub obstacles: ObstacleConfig,
    /// Standard deviation of the per-slot heading disturbance (rad).
    pub heading_noise: f64,
    /// Distance before a turn at which the navigation command switches.
    pub nav_lookahead: f64,
    /// Distance after a turn for which the navigation command persists.
    pub nav_tail: f64,
    pub offtrack_threshold: f64,
    /// Lateral deviation that ends the episode.
    pub terminate_distance: f64,
    pub ego_radius: f64,
    /// Episode time limit as a multiple of the nominal route time.
    pub time_limit_factor: f64,
    /// `α + β` of the Beta targets.
    pub beta_concentration: f64,
    /// Discount of the value target.
    pub value_discount: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            vehicle: VehicleConfig::default(),
            route: RouteConfig::default(),
            render: RenderConfig::default(),
            expert: ExpertConfig::default(),
            obstacles: ObstacleConfig::default(),
            heading_noise: 0.003,
            nav_lookahead: 15.0,
            nav_tail: 5.0,
            offtrack_threshold: 2.0,
            terminate_distance: 6.0,
            ego_radius: 0.9,
            time_limit_factor: 2.0,
            beta_concentration: 10.0,
            value_discount: 0.95,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let v = &self.vehicle;
        let ok = v.tau > 0.0
            && v.k_s > 0.0
            && v.k_a > 0.0
            && v.v_max > 0.0
            && self.route.spacing > 0.0
            && self.route.turn_radius > 0.0
            && self.route.straight_min > 0.0
            && self.route.straight_max >= self.route.straight_min
            && self.render.resolution > 0.0
            && self.heading_noise >= 0.0
            && self.offtrack_threshold > 0.0
            && self.terminate_distance > self.offtrack_threshold
            && self.beta_concentration > 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("invalid environment configuration".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NavCommand {
    Follow = 0,
    Left = 1,
    Right = 2,
    Straight = 3,
}

impl NavCommand {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(NavCommand::Follow),
            1 => Ok(NavCommand::Left),
            2 => Ok(NavCommand::Right),
            3 => Ok(NavCommand::Straight),
            _ => Err(Error::Format(format!("unknown navigation command {i}"))),
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, NavCommand::Left | NavCommand::Right)
    }
}

/// The state-information record `m` sent alongside the symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInfo {
    pub speed: f64,
    pub nav_command: NavCommand,
    /// Goal position in the ego frame at capture time.
    pub destination: [f64; 2],
    /// Capture slot.
    pub timestamp: u64,
}

impl StateInfo {
    pub const FEATURE_LEN: usize = 7;

    /// Network input: scaled speed, one-hot command, scaled destination.
    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; Self::FEATURE_LEN];
        f[0] = self.speed / 5.0;
        f[1 + self.nav_command.index()] = 1.0;
        f[5] = self.destination[0] / 100.0;
        f[6] = self.destination[1] / 100.0;
        f
    }
}

/// Expert label for one capture. Command targets are Beta parameters
/// `[α_steer, β_steer, α_accel, β_accel]` over `(c + 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertLabel {
    pub waypoints: Vec<[f64; 2]>,
    pub control_seq: Vec<[f64; 4]>,
    pub traj_feature: Vec<f64>,
    pub ctrl_features: Vec<Vec<f64>>,
    pub target_speed: f64,
    pub value: f64,
}

/// Beta parameters with mode at `(c + 1) / 2` and `α + β = concentration`.
pub fn beta_target(c: f64, concentration: f64) -> (f64, f64) {
    let x = (c.clamp(-1.0, 1.0) + 1.0) / 2.0;
    let k = concentration - 2.0;
    (1.0 + k * x, 1.0 + k * (1.0 - x))
}

/// Command value decoded from a Beta distribution by its mode.
pub fn beta_mode_command(alpha: f64, beta: f64) -> f64 {
    2.0 * (alpha - 1.0) / (alpha + beta - 2.0) - 1.0
}

/// Command value decoded from a Beta distribution by its mean.
pub fn beta_mean_command(alpha: f64, beta: f64) -> f64 {
    2.0 * alpha / (alpha + beta) - 1.0
}

fn teacher_matrix(tag: u64, out: usize) -> Vec<f64> {
    let mut rng = RngStream::new(0x7EAC_4E55, tag);
    let scale = 1.0 / (PRIVILEGED_DIM as f64).sqrt();
    (0..out * PRIVILEGED_DIM).map(|_| 2.0 * scale * rng.normal()).collect()
}

fn project_features(m: &[f64], p: &[f64], out: usize) -> Vec<f64> {
    (0..out)
        .map(|i| {
            m[i * PRIVILEGED_DIM..(i + 1) * PRIVILEGED_DIM]
                .iter()
                .zip(p)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .tanh()
        })
        .collect()
}

/// Teacher feature targets: fixed random projections of privileged scene
/// quantities, squashed by `tanh`.
pub fn traj_teacher_feature(privileged: &[f64]) -> Vec<f64> {
    thread_local!(static M: Vec<f64> = teacher_matrix(1, TRAJ_FEATURE_DIM));
    M.with(|m| project_features(m, privileged, TRAJ_FEATURE_DIM))
}

pub fn ctrl_teacher_feature(privileged: &[f64]) -> Vec<f64> {
    thread_local!(static M: Vec<f64> = teacher_matrix(2, CTRL_FEATURE_DIM));
    M.with(|m| project_features(m, privileged, CTRL_FEATURE_DIM))
}
