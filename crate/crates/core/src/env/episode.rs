use super::expert::{expert_step, ExpertController};
use super::render::{render, Obstacle, Observation, Weather};
use super::route::Route;
use super::trace::{EpisodeTrace, SlotRecord};
use super::world::{step, wrap_angle, Command, WorldState};
use super::{
    beta_target, ctrl_teacher_feature, traj_teacher_feature, EnvConfig, ExpertLabel, NavCommand, StateInfo,
    PRIVILEGED_DIM,
};
use crate::numerics::RngStream;
use crate::{Error, Result};

const ROUTE_SEED: u64 = 0x5EED_0F_40AD;

/// A route plus its roadside obstacles. Generated from the route id alone,
/// so the same id always names the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub route_id: u64,
    pub route: Route,
    pub obstacles: Vec<Obstacle>,
}

impl Scene {
    pub fn new(cfg: &EnvConfig, route_id: u64) -> Self {
        let mut rng = RngStream::derived(ROUTE_SEED, &[route_id]);
        let route = Route::generate(&cfg.route, &mut rng);
        let oc = &cfg.obstacles;
        let obstacles = (0..oc.count)
            .map(|_| {
                let s = rng.uniform_range(oc.start_margin.min(route.length), route.length);
                let (p, h) = route.pose_at(s);
                let side = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
                let (n0, n1) = (-h.sin(), h.cos());
                let v = rng.uniform_range(-oc.max_speed, oc.max_speed);
                Obstacle {
                    start: [p[0] + side * oc.lateral_offset * n0, p[1] + side * oc.lateral_offset * n1],
                    velocity: [v * h.cos(), v * h.sin()],
                    radius: oc.radius,
                }
            })
            .collect::<Vec<_>>();
        // crossers reach the centreline around when a cruising ego gets there
        let mut obstacles = obstacles;
        let nominal = 0.9 * cfg.expert.v_cruise;
        for _ in 0..oc.crossing {
            let s = rng.uniform_range(oc.start_margin.min(route.length), route.length);
            let (p, h) = route.pose_at(s);
            let side = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            let t_cross = (s / nominal + rng.uniform_range(-oc.crossing_jitter, oc.crossing_jitter)).max(0.0);
            let (n0, n1) = (-h.sin(), h.cos());
            let reach = side * oc.crossing_speed * t_cross;
            obstacles.push(Obstacle {
                start: [p[0] + reach * n0, p[1] + reach * n1],
                velocity: [-side * oc.crossing_speed * n0, -side * oc.crossing_speed * n1],
                radius: oc.radius,
            });
        }
        Scene {
            route_id,
            route,
            obstacles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Completed,
    Deviated,
    TimedOut,
}

/// Mutable episode state: the vehicle on a scene plus infraction counters.
#[derive(Debug, Clone)]
pub struct Episode {
    pub cfg: EnvConfig,
    pub scene: Scene,
    pub weather: Weather,
    world: WorldState,
    progress: f64,
    cte: f64,
    collisions: u32,
    offtrack_events: u32,
    in_collision: bool,
    in_offtrack: bool,
    abs_cte_sum: f64,
    steps: u64,
    max_slots: u64,
    end: Option<EndReason>,
}

impl Episode {
    /// Starts at the route origin at cruise speed, displaced by
    /// `lateral` metres and rotated by `heading` radians.
    pub fn new(cfg: &EnvConfig, scene: Scene, weather: Weather, lateral: f64, heading: f64) -> Self {
        let (p, h) = scene.route.pose_at(0.0);
        let world = WorldState {
            position: [p[0] - lateral * h.sin(), p[1] + lateral * h.cos()],
            heading: h + heading,
            speed: cfg.expert.v_cruise,
            slot: 0,
        };
        let nominal = scene.route.length / cfg.expert.v_turn.min(cfg.expert.v_cruise).max(0.1);
        let max_slots = (cfg.time_limit_factor * nominal / cfg.vehicle.tau).ceil() as u64;
        let mut ep = Episode {
            cfg: *cfg,
            scene,
            weather,
            world,
            progress: 0.0,
            cte: 0.0,
            collisions: 0,
            offtrack_events: 0,
            in_collision: false,
            in_offtrack: false,
            abs_cte_sum: 0.0,
            steps: 0,
            max_slots,
            end: None,
        };
        let proj = ep.scene.route.project_window(ep.world.position, 0.0, 5.0);
        ep.progress = proj.s;
        ep.cte = proj.cte;
        ep
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn cte(&self) -> f64 {
        self.cte
    }

    pub fn collisions(&self) -> u32 {
        self.collisions
    }

    pub fn offtrack_events(&self) -> u32 {
        self.offtrack_events
    }

    pub fn end(&self) -> Option<EndReason> {
        self.end
    }

    pub fn is_done(&self) -> bool {
        self.end.is_some()
    }

    pub fn completion(&self) -> f64 {
        (self.progress / self.scene.route.length).clamp(0.0, 1.0)
    }

    pub fn mean_abs_cte(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.abs_cte_sum / self.steps as f64
        }
    }

    pub fn nav_command_at(&self, s: f64) -> NavCommand {
        nav_command(&self.cfg, &self.scene.route, s)
    }

    pub fn state_info(&self) -> StateInfo {
        let goal = self.scene.route.pose_at(self.scene.route.length).0;
        StateInfo {
            speed: self.world.speed,
            nav_command: self.nav_command_at(self.progress),
            destination: self.world.to_ego(goal),
            timestamp: self.world.slot,
        }
    }

    pub fn observe(&self) -> Observation {
        render(
            &self.world,
            &self.scene.route,
            self.progress,
            &self.scene.obstacles,
            self.cfg.vehicle.tau,
            &self.weather,
            &self.cfg.render,
        )
    }

    pub fn expert_command(&self, ctl: &mut ExpertController) -> Command {
        ctl.command(&self.world, &self.scene, self.progress, &self.cfg.expert, &self.cfg.vehicle)
    }

    /// Label for the current state from a noise-free expert rollout.
    pub fn expert_label(&self, ctl: &ExpertController, l_p: usize, l_w: usize) -> Result<ExpertLabel> {
        expert_action(&self.cfg, &self.scene, &self.world, self.progress, ctl, l_p, l_w)
    }

    /// Applies `command` plus the heading disturbance for one slot.
    pub fn advance(&mut self, command: Command, rng: &mut RngStream) {
        if self.end.is_some() {
            return;
        }
        let mut next = step(&self.world, command, &self.cfg.vehicle);
        next.heading = wrap_angle(next.heading + self.cfg.heading_noise * rng.normal());
        self.world = next;
        let proj = self
            .scene
            .route
            .project_window(self.world.position, self.progress - 2.0, self.progress + 5.0);
        self.progress = self.progress.max(proj.s);
        self.cte = proj.cte;
        self.steps += 1;
        self.abs_cte_sum += proj.cte.abs();

        let off = proj.cte.abs() > self.cfg.offtrack_threshold;
        if off && !self.in_offtrack {
            self.offtrack_events += 1;
        }
        self.in_offtrack = off;

        let reach = self.cfg.ego_radius;
        let hit = self.scene.obstacles.iter().any(|o| {
            let p = o.position(self.world.slot, self.cfg.vehicle.tau);
            (p[0] - self.world.position[0]).hypot(p[1] - self.world.position[1]) < reach + o.radius
        });
        if hit && !self.in_collision {
            self.collisions += 1;
        }
        self.in_collision = hit;

        if self.progress >= self.scene.route.length {
            self.end = Some(EndReason::Completed);
        } else if proj.cte.abs() > self.cfg.terminate_distance {
            self.end = Some(EndReason::Deviated);
        } else if self.world.slot >= self.max_slots {
            self.end = Some(EndReason::TimedOut);
        }
    }

    /// Summary trace with the given per-slot records.
    pub fn trace(&self, slots: Vec<SlotRecord>) -> EpisodeTrace {
        EpisodeTrace {
            route_id: self.scene.route_id,
            slots,
            completion: self.completion(),
            collisions: self.collisions,
            offtrack_events: self.offtrack_events,
            end: self.end,
            mean_cte: self.mean_abs_cte(),
        }
    }
}

pub(crate) fn nav_command(cfg: &EnvConfig, route: &Route, s: f64) -> NavCommand {
    for &(start, end, label) in &route.turns {
        if s >= start - cfg.nav_lookahead && s <= end + cfg.nav_tail {
            return match label {
                super::SegmentLabel::Left => NavCommand::Left,
                super::SegmentLabel::Right => NavCommand::Right,
                super::SegmentLabel::Straight => NavCommand::Straight,
            };
        }
    }
    NavCommand::Follow
}

/// Privileged scene summary behind the teacher features.
fn privileged(cfg: &EnvConfig, scene: &Scene, state: &WorldState, progress: f64) -> Vec<f64> {
    let route = &scene.route;
    let proj = route.project_window(state.position, progress - 2.0, progress + 5.0);
    let r = cfg.route.turn_radius;
    let mut p = Vec::with_capacity(PRIVILEGED_DIM);
    p.push(proj.cte / 2.0);
    p.push(wrap_angle(state.heading - proj.heading));
    p.push(state.speed / 5.0);
    for ds in [0.0, 5.0, 10.0, 15.0, 20.0, 30.0] {
        p.push(route.curvature_at(progress + ds, r) * r);
    }
    let mut nav = [0.0; 4];
    nav[nav_command(cfg, route, progress).index()] = 1.0;
    p.extend_from_slice(&nav);
    let nearest = scene
        .obstacles
        .iter()
        .map(|o| state.to_ego(o.position(state.slot, cfg.vehicle.tau)))
        .filter(|e| e[0] > -3.0)
        .min_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
    match nearest {
        Some(e) => {
            p.push((e[0] / 20.0).clamp(-1.0, 1.0));
            p.push((e[1] / 10.0).clamp(-1.0, 1.0));
        }
        None => p.extend_from_slice(&[1.0, 0.0]),
    }
    p.push((cfg.expert.yield_speed(state, route, progress, &scene.obstacles, cfg.vehicle.tau) / cfg.expert.v_cruise).min(1.5));
    debug_assert_eq!(p.len(), PRIVILEGED_DIM);
    p
}

/// Rolls the expert forward `l_p + l_w` slots on a private copy of the world.
/// Waypoints are ego-frame positions after each step (the origin is the
/// implicit waypoint 0); commands are those issued at steps `0..=l_p`.
pub fn expert_action(
    cfg: &EnvConfig,
    scene: &Scene,
    state: &WorldState,
    progress: f64,
    ctl: &ExpertController,
    l_p: usize,
    l_w: usize,
) -> Result<ExpertLabel> {
    let route = &scene.route;
    if progress >= route.length {
        return Err(Error::EpisodeFinished);
    }
    const VALUE_HORIZON: usize = 20;
    let horizon = (l_p + l_w).max(VALUE_HORIZON);
    let mut ctl = *ctl;
    let mut s = *state;
    let mut prog = progress;
    let mut waypoints = Vec::with_capacity(l_p + l_w);
    let mut control_seq = Vec::with_capacity(l_p + 1);
    let mut ctrl_features = Vec::with_capacity(l_p + 1);
    let mut value = 0.0;
    let mut discount = 1.0;
    for k in 0..horizon {
        if k <= l_p {
            ctrl_features.push(ctrl_teacher_feature(&privileged(cfg, scene, &s, prog)));
        }
        let (cmd, next, next_prog) = expert_step(&mut ctl, &s, scene, prog, &cfg.expert, &cfg.vehicle);
        if k <= l_p {
            let (a_s, b_s) = beta_target(cmd.steer, cfg.beta_concentration);
            let (a_a, b_a) = beta_target(cmd.accel, cfg.beta_concentration);
            control_seq.push([a_s, b_s, a_a, b_a]);
        }
        if k < l_p + l_w {
            waypoints.push(state.to_ego(next.position));
        }
        let cte = route.project_window(next.position, prog - 2.0, prog + 5.0).cte;
        value += discount * ((next_prog - prog) - 0.05 * cte.abs());
        discount *= cfg.value_discount;
        s = next;
        prog = next_prog;
    }
    Ok(ExpertLabel {
        waypoints,
        control_seq,
        traj_feature: traj_teacher_feature(&privileged(cfg, scene, state, progress)),
        ctrl_features,
        target_speed: cfg.expert.target_speed(route, progress).min(cfg.expert.yield_speed(state, route, progress, &scene.obstacles, cfg.vehicle.tau)),
        value,
    })
}

/// Expert in the loop with no channel and no delay.
pub fn run_expert_episode(cfg: &EnvConfig, route_id: u64, seed: u64) -> EpisodeTrace {
    let mut ep = Episode::new(cfg, Scene::new(cfg, route_id), Weather::clear(), 0.0, 0.0);
    let mut rng = RngStream::derived(seed, &[route_id]);
    let mut ctl = ExpertController::default();
    let mut records = Vec::new();
    while !ep.is_done() {
        let slot = ep.world().slot;
        let cmd = ep.expert_command(&mut ctl);
        records.push(SlotRecord::direct(ep.world(), ep.progress(), ep.cte(), slot, cmd));
        ep.advance(cmd, &mut rng);
    }
    ep.trace(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::score;

    #[test]
    fn expert_completes_training_routes() {
        let cfg = EnvConfig::default();
        for id in 0..8 {
            let t = run_expert_episode(&cfg, id, 1);
            assert!(score(&t) >= 95.0, "route {id}: {t:?}", t = (t.completion, t.collisions, t.offtrack_events));
        }
    }

    #[test]
    fn stationary_on_straight_gives_colinear_waypoints() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(&cfg, 0);
        let state = WorldState::default();
        let label = expert_action(&cfg, &scene, &state, 0.0, &ExpertController::default(), 0, 4).unwrap();
        assert_eq!(label.waypoints.len(), 4);
        assert!(label.waypoints.iter().all(|w| w[1].abs() < 1e-6 && w[0] >= 0.0));
        assert_eq!(label.control_seq.len(), 1);
        assert_eq!(label.ctrl_features.len(), 1);
    }

    #[test]
    fn first_waypoint_is_one_expert_step() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(&cfg, 2);
        let state = WorldState {
            position: [1.0, 0.4],
            heading: 0.05,
            speed: 4.5,
            slot: 0,
        };
        let ctl = ExpertController::default();
        let label = expert_action(&cfg, &scene, &state, 1.0, &ctl, 3, 4).unwrap();
        let cmd = ctl.clone().command(&state, &scene, 1.0, &cfg.expert, &cfg.vehicle);
        let next = step(&state, cmd, &cfg.vehicle);
        let want = state.to_ego(next.position);
        assert!((label.waypoints[0][0] - want[0]).abs() < 1e-12);
        assert!((label.waypoints[0][1] - want[1]).abs() < 1e-12);
        assert_eq!(label.waypoints.len(), 7);
        assert_eq!(label.control_seq.len(), 4);
    }

    #[test]
    fn finished_route_signals_end() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(&cfg, 0);
        let len = scene.route.length;
        let r = expert_action(&cfg, &scene, &WorldState::default(), len, &ExpertController::default(), 0, 4);
        assert!(matches!(r, Err(Error::EpisodeFinished)));
    }

    #[test]
    fn nav_command_flags_upcoming_turns() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(&cfg, 1);
        let (start, _, label) = scene.route.turns[0];
        assert_eq!(nav_command(&cfg, &scene.route, 0.0), NavCommand::Follow);
        let cmd = nav_command(&cfg, &scene.route, start - 1.0);
        assert!(cmd.is_turn());
        assert_eq!(cmd == NavCommand::Left, label == crate::env::SegmentLabel::Left);
    }
}
