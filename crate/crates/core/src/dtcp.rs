//! Delay-aware trajectory-guided control prediction agent.
//!
//! A shared trunk reads the (gated) equalised symbols together with the
//! channel magnitudes; a small embedder reads the state record `m`. Two
//! branches sit on top:
//!
//! * the trajectory branch starts a GRU from the trajectory feature and rolls
//!   it `l_p + l_w` steps. Each step emits a speed and a yaw rate which are
//!   integrated into ego-frame waypoints; a pure-pursuit PID turns sliding
//!   windows of waypoints into commands;
//! * the control branch starts a GRU from zero, feeds it the previous control
//!   feature, and at each step gates the trunk's feature map with the pair of
//!   hidden states to produce the next control feature and a Beta command.
//!
//! [`combine`] fuses the two command sequences according to the turning flag
//! and the end-to-end delay.

use crate::env::{beta_mode_command, Command, ExpertLabel, StateInfo, CTRL_FEATURE_DIM, TRAJ_FEATURE_DIM};
use crate::nn::{Gru, Linear};
use crate::numerics::{special, Bound, ComplexVec, ParamId, ParamStore, RngStream, Tape, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Longest prediction horizon the agent supports.
pub const MAX_HORIZON: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub l_z: usize,
    pub trunk_width: usize,
    pub state_width: usize,
    /// GRU hidden width of both branches; also the trajectory feature width.
    pub hidden: usize,
    pub ctrl_feature: usize,
    pub pid: PidConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            l_z: 48,
            trunk_width: 128,
            state_width: 32,
            hidden: TRAJ_FEATURE_DIM,
            ctrl_feature: CTRL_FEATURE_DIM,
            pid: PidConfig::default(),
        }
    }
}

/// Constants of the waypoint-to-command controller. `tau` and `k_s` mirror
/// the vehicle so that bearings map to the right curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub tau: f64,
    pub k_s: f64,
    pub steer_kp: f64,
    pub speed_kp: f64,
    /// Floor on the speed used by the kinematic waypoint decoder.
    pub speed_ref: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            tau: 0.05,
            k_s: 0.15,
            steer_kp: 1.0,
            speed_kp: 0.8,
            speed_ref: 5.0,
        }
    }
}

/// Converts a window of `l_w + 1` ego-frame waypoints (the first being the
/// vehicle position) into a command.
///
/// Steering aims at the mean of the unit directions from the first point to
/// the others: with bearing `θ` and mean chord length `d`, the arc through
/// that aim point has curvature `2 sin θ / d`. Throttle is proportional to
/// the gap between the window's implied speed `arc / (l_w·τ)` and
/// `current_speed`.
pub fn pid_waypoints_to_command(window: &[[f64; 2]], current_speed: f64, cfg: &PidConfig) -> Command {
    if window.len() < 2 {
        return Command::default();
    }
    let o = window[0];
    let mut dir = [0.0, 0.0];
    let mut chord = 0.0;
    let mut n = 0.0;
    for p in &window[1..] {
        let (dx, dy) = (p[0] - o[0], p[1] - o[1]);
        let d = dx.hypot(dy);
        if d > 1e-9 {
            dir[0] += dx / d;
            dir[1] += dy / d;
            chord += d;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return Command::default();
    }
    chord /= n;
    let theta = dir[1].atan2(dir[0]);
    let steer = cfg.steer_kp * 2.0 * theta.sin() / chord / cfg.k_s;
    let arc: f64 = window.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
    let target = arc / ((window.len() - 1) as f64 * cfg.tau);
    Command::new(steer, cfg.speed_kp * (target - current_speed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub lambda_c: f64,
    /// Delay threshold in slots; `None` means the predicted branch is never
    /// selected.
    pub delta_t: Option<u64>,
    /// Treat every situation as turning.
    pub force_turning: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda_c: 0.7,
            delta_t: Some(10),
            force_turning: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.lambda_c) {
            return Err(Error::Parameter(format!("lambda_c must lie in [0.5, 1], got {}", self.lambda_c)));
        }
        Ok(())
    }
}

/// Which case of the fusion rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionCase {
    /// Turning and the delay reaches the threshold: predicted entries.
    TurningPredicted,
    /// Turning below the threshold: entry 0, trajectory-weighted.
    TurningCurrent,
    /// Not turning: entry 0, control-weighted.
    NotTurning,
}

impl FusionCase {
    /// Sequence index the case reads, given the horizon `l_p`.
    pub fn index(self, l_p: usize) -> usize {
        match self {
            FusionCase::TurningPredicted => l_p,
            _ => 0,
        }
    }
}

pub fn fusion_case(turning: bool, delta: u64, cfg: &FusionConfig) -> FusionCase {
    let turning = turning || cfg.force_turning;
    match (turning, cfg.delta_t) {
        (true, Some(th)) if delta >= th => FusionCase::TurningPredicted,
        (true, _) => FusionCase::TurningCurrent,
        (false, _) => FusionCase::NotTurning,
    }
}

/// Conditional fusion of the trajectory and control command sequences. Both
/// have length `l_p + 1`; control commands are already decoded to scalars.
pub fn combine(c_traj: &[Command], c_ctrl: &[Command], turning: bool, delta: u64, cfg: &FusionConfig) -> Result<Command> {
    Ok(combine_with_case(c_traj, c_ctrl, turning, delta, cfg)?.0)
}

pub fn combine_with_case(
    c_traj: &[Command],
    c_ctrl: &[Command],
    turning: bool,
    delta: u64,
    cfg: &FusionConfig,
) -> Result<(Command, FusionCase)> {
    if c_traj.is_empty() || c_traj.len() != c_ctrl.len() {
        return Err(Error::Shape(format!(
            "command sequences of length {} and {}",
            c_traj.len(),
            c_ctrl.len()
        )));
    }
    let l_p = c_traj.len() - 1;
    let case = fusion_case(turning, delta, cfg);
    let i = case.index(l_p);
    let lc = cfg.lambda_c;
    let (a, b, wa) = match case {
        FusionCase::NotTurning => (c_ctrl[i], c_traj[i], lc),
        _ => (c_traj[i], c_ctrl[i], lc),
    };
    let cmd = Command::new(wa * a.steer + (1.0 - wa) * b.steer, wa * a.accel + (1.0 - wa) * b.accel);
    Ok((cmd, case))
}

/// `KL(Be(α1, β1) ∥ Be(α2, β2))`.
pub fn beta_kl(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<f64> {
    if [a1, b1, a2, b2].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("Beta parameters must be > 0".into()));
    }
    Ok(special::ln_beta(a2, b2)? - special::ln_beta(a1, b1)?
        + (a1 - a2) * special::digamma(a1)?
        + (b1 - b2) * special::digamma(b1)?
        + (a2 - a1 + b2 - b1) * special::digamma(a1 + b1)?)
}

/// Elementwise Beta KL on the tape; `a2`, `b2` are constants.
pub fn beta_kl_tape(t: &Tape<'_>, a1: Var, b1: Var, a2: &[f64], b2: &[f64]) -> Result<Var> {
    if t.with_value(a1, |v| v.iter().any(|x| !(*x > 0.0))) || t.with_value(b1, |v| v.iter().any(|x| !(*x > 0.0))) {
        return Err(Error::Domain("Beta parameters must be > 0".into()));
    }
    let (r, c) = t.shape(a1);
    let const_part: Vec<f64> = a2
        .iter()
        .zip(b2)
        .map(|(&a, &b)| special::ln_beta(a, b))
        .collect::<Result<_>>()?;
    let lnb2 = t.constant(r, c, const_part)?;
    let a2v = t.constant(r, c, a2.to_vec())?;
    let b2v = t.constant(r, c, b2.to_vec())?;
    let s1 = t.add(a1, b1)?;
    let lnb1 = {
        let ga = t.unary(a1, crate::numerics::Unary::Lgamma)?;
        let gb = t.unary(b1, crate::numerics::Unary::Lgamma)?;
        let gs = t.unary(s1, crate::numerics::Unary::Lgamma)?;
        let x = t.add(ga, gb)?;
        t.sub(x, gs)?
    };
    let da = t.unary(a1, crate::numerics::Unary::Digamma)?;
    let db = t.unary(b1, crate::numerics::Unary::Digamma)?;
    let ds = t.unary(s1, crate::numerics::Unary::Digamma)?;
    let ta = t.mul(t.sub(a1, a2v)?, da)?;
    let tb = t.mul(t.sub(b1, b2v)?, db)?;
    let s2 = t.add(a2v, b2v)?;
    let ts = t.mul(t.sub(s2, s1)?, ds)?;
    let k = t.sub(lnb2, lnb1)?;
    let k = t.add(k, ta)?;
    let k = t.add(k, tb)?;
    t.add(k, ts)
}

/// Tape handles of one agent pass. Beta parameters are laid out as
/// `[α_steer, α_accel, β_steer, β_accel]`.
#[derive(Debug, Clone)]
pub struct AgentVars {
    pub speed: Var,
    pub value: Var,
    /// `1 × 2(l_p + l_w)`, interleaved `(x, y)`.
    pub waypoints: Var,
    /// Integrated heading after each waypoint step.
    pub headings: Vec<Var>,
    /// Decoded speed of each waypoint step.
    pub step_speeds: Vec<Var>,
    pub traj_feature: Var,
    pub ctrl_params: Vec<Var>,
    pub ctrl_features: Vec<Var>,
    pub traj_hidden: Vec<Var>,
    pub ctrl_hidden: Vec<Var>,
}

/// Numeric agent output.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub v: f64,
    pub s: f64,
    pub waypoints: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    pub step_speeds: Vec<f64>,
    pub traj_feature: Vec<f64>,
    /// `[α_steer, β_steer, α_accel, β_accel]` per step.
    pub ctrl_commands: Vec<[f64; 4]>,
    pub ctrl_features: Vec<Vec<f64>>,
    pub traj_hidden_seq: Vec<Vec<f64>>,
    pub ctrl_hidden_seq: Vec<Vec<f64>>,
}

impl AgentOutput {
    /// Beta commands decoded by their modes, which invert the teacher targets.
    pub fn ctrl_decoded(&self) -> Vec<Command> {
        self.ctrl_commands
            .iter()
            .map(|p| Command::new(beta_mode_command(p[0], p[1]), beta_mode_command(p[2], p[3])))
            .collect()
    }

    /// PID commands for windows starting at steps `0..=l_p`. Window `j` is
    /// expressed in the predicted ego frame at step `j`.
    pub fn traj_commands(&self, l_p: usize, current_speed: f64, pid: &PidConfig) -> Vec<Command> {
        let l_w = self.waypoints.len() - l_p;
        let mut pts = Vec::with_capacity(self.waypoints.len() + 1);
        pts.push([0.0, 0.0]);
        pts.extend_from_slice(&self.waypoints);
        (0..=l_p)
            .map(|j| {
                let (h, v) = if j == 0 {
                    (0.0, current_speed)
                } else {
                    (self.headings[j - 1], self.step_speeds[j - 1])
                };
                let (c, s) = (h.cos(), h.sin());
                let o = pts[j];
                let window: Vec<[f64; 2]> = pts[j..=j + l_w]
                    .iter()
                    .map(|p| {
                        let (dx, dy) = (p[0] - o[0], p[1] - o[1]);
                        [c * dx + s * dy, -s * dx + c * dy]
                    })
                    .collect();
                pid_waypoints_to_command(&window, v, pid)
            })
            .collect()
    }
}

/// Per-example agent inputs already placed on the tape.
#[derive(Debug, Clone, Copy)]
pub struct AgentInputs {
    /// Equalised symbols, `1 × 2·l_z` interleaved (possibly zero-filled).
    pub zhat: Var,
    /// `|h|`, `1 × l_z`.
    pub h_mag: Var,
    /// `|h|²` repeated per real dimension, `1 × 2·l_z`.
    pub h_pow: Var,
    /// [`StateInfo::features`], `1 × 7`.
    pub state: Var,
    /// Destination scaled for the trajectory GRU, `1 × 2`.
    pub destination: Var,
}

impl AgentInputs {
    pub fn constants(t: &Tape<'_>, zhat: &[f64], h: &[num_complex::Complex64], m: &StateInfo) -> Self {
        let h_mag: Vec<f64> = h.iter().map(|x| x.norm()).collect();
        let h_pow: Vec<f64> = h.iter().flat_map(|x| [x.norm_sqr(), x.norm_sqr()]).collect();
        AgentInputs {
            zhat: t.row(zhat.to_vec()),
            h_mag: t.row(h_mag),
            h_pow: t.row(h_pow),
            state: t.row(m.features()),
            destination: t.row(vec![m.destination[0] / 100.0, m.destination[1] / 100.0]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    gain_c: ParamId,
    trunk: Linear,
    state_embed: Linear,
    traj_feat: Linear,
    ctrl_feat0: Linear,
    traj_gru: Gru,
    wp_head: Linear,
    ctrl_gru: Gru,
    gate: Linear,
    ctrl_next: Linear,
    beta_head: Linear,
    speed_head: Linear,
    value_head: Linear,
    pub params: ParamStore,
}

/// Inverse softplus of 0.1: initial regulariser of the symbol gate.
const GAIN_INIT: f64 = -2.252_168_693_800_844_6;

impl Agent {
    pub fn new(config: AgentConfig, rng: &mut RngStream) -> Self {
        let c = config;
        let mut p = ParamStore::new();
        let gain_c = p.add_filled("agent.gain_c", &[2 * c.l_z], GAIN_INIT);
        let feat = c.trunk_width + c.state_width;
        let trunk = Linear::new(&mut p, "agent.trunk", 3 * c.l_z, c.trunk_width, rng);
        let state_embed = Linear::new(&mut p, "agent.state", crate::env::StateInfo::FEATURE_LEN, c.state_width, rng);
        let traj_feat = Linear::new(&mut p, "agent.traj_feat", feat, c.hidden, rng);
        let ctrl_feat0 = Linear::new(&mut p, "agent.ctrl_feat", feat, c.ctrl_feature, rng);
        let traj_gru = Gru::new(&mut p, "agent.traj_gru", 4, c.hidden, rng);
        let wp_head = Linear::new(&mut p, "agent.wp", c.hidden, 2, rng);
        let ctrl_gru = Gru::new(&mut p, "agent.ctrl_gru", c.ctrl_feature, c.hidden, rng);
        let gate = Linear::new(&mut p, "agent.gate", 2 * c.hidden, c.trunk_width, rng);
        let ctrl_next = Linear::new(&mut p, "agent.ctrl_next", feat, c.ctrl_feature, rng);
        let beta_head = Linear::new(&mut p, "agent.beta", c.ctrl_feature, 4, rng);
        let speed_head = Linear::new(&mut p, "agent.speed", feat, 1, rng);
        let value_head = Linear::new(&mut p, "agent.value", feat, 1, rng);
        Agent {
            config,
            gain_c,
            trunk,
            state_embed,
            traj_feat,
            ctrl_feat0,
            traj_gru,
            wp_head,
            ctrl_gru,
            gate,
            ctrl_next,
            beta_head,
            speed_head,
            value_head,
            params: p,
        }
    }

    pub fn with_params(config: AgentConfig, params: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(config, &mut RngStream::new(0, 0));
        if fresh.params.names() != params.names()
            || fresh.params.tensors().zip(params.tensors()).any(|(a, b)| a.shape != b.shape)
        {
            return Err(Error::Format("agent weights do not match the configured architecture".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }

    /// Agent pass on the tape.
    pub fn forward(&self, t: &Tape<'_>, p: &Bound, x: &AgentInputs, l_p: usize, l_w: usize) -> Result<AgentVars> {
        let c = &self.config;
        if l_p > MAX_HORIZON {
            return Err(Error::Usage(format!("l_p = {l_p} exceeds the supported horizon {MAX_HORIZON}")));
        }
        if t.shape(x.zhat) != (1, 2 * c.l_z) || t.shape(x.h_mag) != (1, c.l_z) {
            return Err(Error::Shape(format!("agent expects l_z = {}", c.l_z)));
        }
        let tau = c.pid.tau;

        // symbol gate |h|²/(|h|² + c): bounded weight on badly faded symbols
        let reg = t.softplus(p[self.gain_c]);
        let denom = t.add(x.h_pow, reg)?;
        let g = t.mul(x.h_pow, t.recip(denom))?;
        let gated = t.mul(x.zhat, g)?;
        let trunk_in = t.concat(&[gated, x.h_mag])?;
        let mid = t.tanh(self.trunk.forward(t, p, trunk_in)?);
        let s_emb = t.tanh(self.state_embed.forward(t, p, x.state)?);
        let feat = t.concat(&[mid, s_emb])?;

        let speed = t.add_scalar(self.speed_head.forward(t, p, feat)?, c.pid.speed_ref);
        let value = self.value_head.forward(t, p, feat)?;

        // trajectory branch
        let traj_feature = t.tanh(self.traj_feat.forward(t, p, feat)?);
        let n_wp = l_p + l_w;
        let mut h = traj_feature;
        let mut heading = t.row(vec![0.0]);
        let mut px = t.row(vec![0.0]);
        let mut py = t.row(vec![0.0]);
        let mut coords = Vec::with_capacity(2 * n_wp);
        let mut headings = Vec::with_capacity(n_wp);
        let mut step_speeds = Vec::with_capacity(n_wp);
        let mut traj_hidden = Vec::with_capacity(n_wp);
        for _ in 0..n_wp {
            let prev = t.scale(t.concat(&[px, py])?, 0.1);
            let inp = t.concat(&[prev, x.destination])?;
            h = self.traj_gru.step(t, p, inp, h)?;
            traj_hidden.push(h);
            let out = self.wp_head.forward(t, p, h)?;
            let v = t.scale(t.add_scalar(t.slice(out, 0, 1)?, 1.0), c.pid.speed_ref);
            let w = t.slice(out, 1, 1)?;
            heading = t.add(heading, t.scale(w, tau))?;
            let step = t.scale(v, tau);
            px = t.add(px, t.mul(step, t.cos(heading))?)?;
            py = t.add(py, t.mul(step, t.sin(heading))?)?;
            coords.push(px);
            coords.push(py);
            headings.push(heading);
            step_speeds.push(v);
        }
        let waypoints = if coords.is_empty() {
            t.row(vec![])
        } else {
            t.concat(&coords)?
        };

        // control branch
        let r0 = t.tanh(self.ctrl_feat0.forward(t, p, feat)?);
        let mut ctrl_features = vec![r0];
        let mut ctrl_params = vec![self.beta(t, p, r0)?];
        let mut hc = t.row(vec![0.0; c.hidden]);
        let mut ctrl_hidden = Vec::with_capacity(l_p);
        let mut r = r0;
        for &ht in traj_hidden.iter().take(l_p) {
            hc = self.ctrl_gru.step(t, p, r, hc)?;
            ctrl_hidden.push(hc);
            let pair = t.concat(&[hc, ht])?;
            let gate = t.sigmoid(self.gate.forward(t, p, pair)?);
            let masked = t.mul(gate, mid)?;
            let inp = t.concat(&[masked, s_emb])?;
            r = t.tanh(self.ctrl_next.forward(t, p, inp)?);
            ctrl_features.push(r);
            ctrl_params.push(self.beta(t, p, r)?);
        }

        Ok(AgentVars {
            speed,
            value,
            waypoints,
            headings,
            step_speeds,
            traj_feature,
            ctrl_params,
            ctrl_features,
            traj_hidden,
            ctrl_hidden,
        })
    }

    fn beta(&self, t: &Tape<'_>, p: &Bound, r: Var) -> Result<Var> {
        let raw = self.beta_head.forward(t, p, r)?;
        Ok(t.add_scalar(t.softplus(raw), 1.0))
    }

    /// Inference pass from numeric inputs.
    pub fn run(&self, zhat: &ComplexVec, m: &StateInfo, h: &ComplexVec, l_p: usize, l_w: usize) -> Result<AgentOutput> {
        if zhat.len() != self.config.l_z || h.len() != self.config.l_z {
            return Err(Error::Usage(format!(
                "agent expects {} symbols and channel gains, got {} and {}",
                self.config.l_z,
                zhat.len(),
                h.len()
            )));
        }
        let t = Tape::new();
        let p = t.bind(&self.params);
        let x = AgentInputs::constants(&t, &zhat.to_interleaved(), h, m);
        let vars = self.forward(&t, &p, &x, l_p, l_w)?;
        let wp = t.value(vars.waypoints);
        let out = AgentOutput {
            v: t.scalar(vars.speed),
            s: t.scalar(vars.value),
            waypoints: wp.chunks(2).map(|c| [c[0], c[1]]).collect(),
            headings: vars.headings.iter().map(|v| t.scalar(*v)).collect(),
            step_speeds: vars.step_speeds.iter().map(|v| t.scalar(*v)).collect(),
            traj_feature: t.value(vars.traj_feature),
            ctrl_commands: vars
                .ctrl_params
                .iter()
                .map(|v| {
                    let q = t.value(*v);
                    [q[0], q[2], q[1], q[3]]
                })
                .collect(),
            ctrl_features: vars.ctrl_features.iter().map(|v| t.value(*v)).collect(),
            traj_hidden_seq: vars.traj_hidden.iter().map(|v| t.value(*v)).collect(),
            ctrl_hidden_seq: vars.ctrl_hidden.iter().map(|v| t.value(*v)).collect(),
        };
        let finite = out.waypoints.iter().flatten().all(|v| v.is_finite())
            && out.ctrl_commands.iter().flatten().all(|v| v.is_finite())
            && out.v.is_finite();
        if !finite {
            return Err(Error::Numeric("agent produced non-finite output".into()));
        }
        Ok(out)
    }
}

/// Alias matching the functional description of the agent pass.
pub fn agent_forward(
    agent: &Agent,
    zhat: &ComplexVec,
    m: &StateInfo,
    h: &ComplexVec,
    l_p: usize,
    l_w: usize,
) -> Result<AgentOutput> {
    agent.run(zhat, m, h, l_p, l_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_feat: f64,
    pub lambda_value: f64,
    pub lambda_speed: f64,
    pub lambda_traj: f64,
    pub lambda_ctrl: f64,
    pub lambda_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_feat: 0.05,
            lambda_value: 0.001,
            lambda_speed: 0.05,
            lambda_traj: 1.0,
            lambda_ctrl: 1.0,
            lambda_aux: 1.0,
        }
    }
}

fn diff_norm(t: &Tape<'_>, a: Var, target: &[f64]) -> Result<Var> {
    let (r, c) = t.shape(a);
    let tv = t.constant(r, c, target.to_vec())?;
    Ok(t.norm2_rows(t.sub(a, tv)?))
}

/// Summed L1 over all waypoint coordinates plus `λ_feat` times the
/// Euclidean distance of the trajectory feature to its teacher.
pub fn loss_traj(t: &Tape<'_>, out: &AgentVars, label: &ExpertLabel, lambda_feat: f64) -> Result<Var> {
    let n = label.waypoints.len();
    if t.shape(out.waypoints).1 != 2 * n {
        return Err(Error::Shape(format!(
            "{} predicted waypoint coordinates vs {} labelled",
            t.shape(out.waypoints).1,
            2 * n
        )));
    }
    let feat = diff_norm(t, out.traj_feature, &label.traj_feature)?;
    if n == 0 {
        return Ok(t.scale(feat, lambda_feat));
    }
    let target: Vec<f64> = label.waypoints.iter().flatten().copied().collect();
    let tv = t.constant(1, 2 * n, target)?;
    let l1 = t.sum(t.abs(t.sub(out.waypoints, tv)?));
    t.add(l1, t.scale(feat, lambda_feat))
}

/// Mean over the `l_p + 1` steps of the summed per-dimension
/// `KL(predicted ∥ expert)` plus `λ_feat` times the mean per-step Euclidean
/// distance of the control features to their teachers.
pub fn loss_ctrl(t: &Tape<'_>, out: &AgentVars, label: &ExpertLabel, lambda_feat: f64) -> Result<Var> {
    let n = label.control_seq.len();
    if out.ctrl_params.len() != n || out.ctrl_features.len() != n || label.ctrl_features.len() != n {
        return Err(Error::Shape(format!(
            "{} predicted commands vs {} labelled",
            out.ctrl_params.len(),
            n
        )));
    }
    let mut kls = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n);
    for j in 0..n {
        let q = label.control_seq[j];
        let a1 = t.slice(out.ctrl_params[j], 0, 2)?;
        let b1 = t.slice(out.ctrl_params[j], 2, 2)?;
        let kl = beta_kl_tape(t, a1, b1, &[q[0], q[2]], &[q[1], q[3]])?;
        kls.push(t.sum(kl));
        feats.push(diff_norm(t, out.ctrl_features[j], &label.ctrl_features[j])?);
    }
    let kl = t.mean(t.concat(&kls)?);
    let feat = t.mean(t.concat(&feats)?);
    t.add(kl, t.scale(feat, lambda_feat))
}

/// `λ_value·|s − ex_s| + λ_speed·|v − ex_v|`.
pub fn loss_aux(t: &Tape<'_>, out: &AgentVars, label: &ExpertLabel, lambda_value: f64, lambda_speed: f64) -> Result<Var> {
    let value = diff_norm(t, out.value, &[label.value])?;
    let speed = diff_norm(t, out.speed, &[label.target_speed])?;
    t.add(t.scale(value, lambda_value), t.scale(speed, lambda_speed))
}

pub fn loss_dtcp(t: &Tape<'_>, out: &AgentVars, label: &ExpertLabel, w: &LossWeights) -> Result<Var> {
    let lt = loss_traj(t, out, label, w.lambda_feat)?;
    let lc = loss_ctrl(t, out, label, w.lambda_feat)?;
    let la = loss_aux(t, out, label, w.lambda_value, w.lambda_speed)?;
    let s = t.add(t.scale(lt, w.lambda_traj), t.scale(lc, w.lambda_ctrl))?;
    t.add(s, t.scale(la, w.lambda_aux))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{beta_target, NavCommand};
    use crate::numerics::grad_check;
    use proptest::prelude::*;

    fn small_config() -> AgentConfig {
        AgentConfig {
            l_z: 4,
            trunk_width: 6,
            state_width: 3,
            hidden: 5,
            ctrl_feature: 3,
            pid: PidConfig::default(),
        }
    }

    fn state() -> StateInfo {
        StateInfo {
            speed: 4.0,
            nav_command: NavCommand::Left,
            destination: [40.0, 10.0],
            timestamp: 0,
        }
    }

    fn label(l_p: usize, l_w: usize, cfg: &AgentConfig) -> ExpertLabel {
        ExpertLabel {
            waypoints: (1..=l_p + l_w).map(|i| [0.25 * i as f64, 0.01 * i as f64]).collect(),
            control_seq: (0..=l_p)
                .map(|j| {
                    let (a, b) = beta_target(0.1 * j as f64, 10.0);
                    let (c, d) = beta_target(-0.2, 10.0);
                    [a, b, c, d]
                })
                .collect(),
            traj_feature: vec![0.1; cfg.hidden],
            ctrl_features: vec![vec![-0.2; cfg.ctrl_feature]; l_p + 1],
            target_speed: 4.5,
            value: 1.0,
        }
    }

    fn inputs(t: &Tape<'_>, l_z: usize) -> AgentInputs {
        let z: Vec<f64> = (0..2 * l_z).map(|i| (i as f64 * 0.7).sin()).collect();
        let h: Vec<num_complex::Complex64> = (0..l_z)
            .map(|i| num_complex::Complex64::new(0.5 + 0.1 * i as f64, -0.2))
            .collect();
        AgentInputs::constants(t, &z, &h, &state())
    }

    #[test]
    fn sequence_lengths_follow_horizons() {
        let cfg = small_config();
        let agent = Agent::new(cfg, &mut RngStream::new(1, 0));
        let zeros = ComplexVec::zeros(cfg.l_z);
        let h = ComplexVec::from(vec![num_complex::Complex64::new(1.0, 0.0); cfg.l_z]);
        for (l_p, l_w) in [(0, 0), (0, 4), (3, 2), (24, 8)] {
            let out = agent.run(&zeros, &state(), &h, l_p, l_w).unwrap();
            assert_eq!(out.waypoints.len(), l_p + l_w);
            assert_eq!(out.ctrl_hidden_seq.len(), l_p);
            assert_eq!(out.traj_hidden_seq.len(), l_p + l_w);
            assert_eq!(out.ctrl_commands.len(), l_p + 1);
            assert_eq!(out.ctrl_features.len(), l_p + 1);
            assert!(out.ctrl_commands.iter().flatten().all(|v| *v > 1.0));
            assert_eq!(out.traj_commands(l_p, 4.0, &cfg.pid).len(), l_p + 1);
        }
        assert!(matches!(agent.run(&zeros, &state(), &h, 25, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_input_is_deterministic() {
        let cfg = small_config();
        let agent = Agent::new(cfg, &mut RngStream::new(2, 0));
        let zeros = ComplexVec::zeros(cfg.l_z);
        let h = ComplexVec::from(vec![num_complex::Complex64::new(0.3, 0.4); cfg.l_z]);
        let a = agent.run(&zeros, &state(), &h, 2, 2).unwrap();
        let b = agent.run(&zeros, &state(), &h, 2, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pid_straight_window_at_target_speed() {
        let pid = PidConfig::default();
        let window: Vec<[f64; 2]> = (0..5).map(|i| [0.25 * i as f64, 0.0]).collect();
        let cmd = pid_waypoints_to_command(&window, 5.0, &pid);
        assert!(cmd.steer.abs() < 1e-12 && cmd.accel.abs() < 1e-12);
    }

    #[test]
    fn pid_left_bearing_steers_left() {
        let pid = PidConfig::default();
        let window: Vec<[f64; 2]> = (0..5).map(|i| [0.0, 0.25 * i as f64]).collect();
        assert!(pid_waypoints_to_command(&window, 5.0, &pid).steer > 0.0);
    }

    #[test]
    fn pid_target_speed_halves_with_double_tau() {
        let window: Vec<[f64; 2]> = (0..5).map(|i| [0.3 * i as f64, 0.0]).collect();
        let a = PidConfig {
            speed_kp: 1.0,
            ..Default::default()
        };
        let b = PidConfig { tau: 2.0 * a.tau, ..a };
        // with zero current speed the throttle equals the implied target speed
        let va = pid_waypoints_to_command(&window, 0.0, &PidConfig { speed_kp: 0.1, ..a }).accel;
        let vb = pid_waypoints_to_command(&window, 0.0, &PidConfig { speed_kp: 0.1, ..b }).accel;
        assert!((va - 2.0 * vb).abs() < 1e-12);
    }

    #[test]
    fn pid_degenerate_window_is_zero() {
        let w = vec![[1.0, 1.0]; 5];
        assert_eq!(pid_waypoints_to_command(&w, 3.0, &PidConfig::default()), Command::default());
    }

    #[test]
    fn pid_curvature_matches_a_circle() {
        let pid = PidConfig::default();
        let kappa = 0.08;
        let window: Vec<[f64; 2]> = (0..5)
            .map(|i| {
                let s = 0.25 * i as f64;
                [(kappa * s).sin() / kappa, (1.0 - (kappa * s).cos()) / kappa]
            })
            .collect();
        let steer = pid_waypoints_to_command(&window, 5.0, &pid).steer;
        assert!((steer * pid.k_s - kappa).abs() / kappa < 0.01);
    }

    fn cmd(s: f64) -> Command {
        Command::new(s, s)
    }

    #[test]
    fn fusion_cases() {
        let cfg = FusionConfig::default();
        let traj = vec![cmd(0.0), cmd(0.5), cmd(1.0)];
        let ctrl = vec![cmd(0.2), cmd(0.0), cmd(0.0)];
        let (c, case) = combine_with_case(&traj, &ctrl, true, 12, &cfg).unwrap();
        assert_eq!(case, FusionCase::TurningPredicted);
        assert!((c.steer - 0.7).abs() < 1e-12);
        let (c, case) = combine_with_case(&traj, &ctrl, true, 5, &cfg).unwrap();
        assert_eq!(case, FusionCase::TurningCurrent);
        assert!((c.steer - (0.7 * 0.0 + 0.3 * 0.2)).abs() < 1e-12);
        let (c, case) = combine_with_case(&traj, &ctrl, false, 50, &cfg).unwrap();
        assert_eq!(case, FusionCase::NotTurning);
        assert!((c.steer - (0.7 * 0.2 + 0.3 * 0.0)).abs() < 1e-12);
    }

    #[test]
    fn fusion_fixed_point_and_flags() {
        let same = vec![cmd(0.4); 3];
        for lc in [0.5, 0.8, 1.0] {
            let cfg = FusionConfig {
                lambda_c: lc,
                ..Default::default()
            };
            assert!((combine(&same, &same, false, 3, &cfg).unwrap().steer - 0.4).abs() < 1e-12);
        }
        let never = FusionConfig {
            delta_t: None,
            ..Default::default()
        };
        assert_eq!(fusion_case(true, 1000, &never), FusionCase::TurningCurrent);
        let forced = FusionConfig {
            delta_t: Some(0),
            force_turning: true,
            ..Default::default()
        };
        assert_eq!(fusion_case(false, 0, &forced), FusionCase::TurningPredicted);
        assert!(FusionConfig { lambda_c: 0.4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn beta_kl_basics() {
        assert!(beta_kl(2.0, 3.0, 2.0, 3.0).unwrap().abs() < 1e-12);
        assert!((beta_kl(2.0, 2.0, 1.0, 1.0).unwrap() - 0.125_09).abs() < 1e-5);
        assert!(matches!(beta_kl(0.0, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn losses_vanish_on_matching_output() {
        let t = Tape::new();
        let cfg = small_config();
        let lab = label(1, 2, &cfg);
        let wp: Vec<f64> = lab.waypoints.iter().flatten().copied().collect();
        let out = AgentVars {
            speed: t.row(vec![lab.target_speed]),
            value: t.row(vec![lab.value]),
            waypoints: t.row(wp),
            headings: vec![],
            step_speeds: vec![],
            traj_feature: t.row(lab.traj_feature.clone()),
            ctrl_params: lab
                .control_seq
                .iter()
                .map(|q| t.row(vec![q[0], q[2], q[1], q[3]]))
                .collect(),
            ctrl_features: lab.ctrl_features.iter().map(|f| t.row(f.clone())).collect(),
            traj_hidden: vec![],
            ctrl_hidden: vec![],
        };
        let l = loss_dtcp(&t, &out, &lab, &LossWeights::default()).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);

        // waypoints shifted by (1, 0): summed L1 equals the waypoint count
        let shifted: Vec<f64> = lab.waypoints.iter().flat_map(|w| [w[0] + 1.0, w[1]]).collect();
        let moved = AgentVars {
            waypoints: t.row(shifted),
            ..out.clone()
        };
        let lt = loss_traj(&t, &moved, &lab, 0.05).unwrap();
        assert!((t.scalar(lt) - 3.0).abs() < 1e-12);

        let off = AgentVars {
            value: t.row(vec![lab.value + 2.0]),
            ..out
        };
        let la = loss_aux(&t, &off, &lab, 0.001, 0.05).unwrap();
        assert!((t.scalar(la) - 0.002).abs() < 1e-15);
    }

    #[test]
    fn single_step_ctrl_loss_is_one_kl() {
        let t = Tape::new();
        let cfg = small_config();
        let lab = label(0, 1, &cfg);
        let p = [3.0, 2.5, 4.0, 6.0];
        let out = AgentVars {
            speed: t.row(vec![0.0]),
            value: t.row(vec![0.0]),
            waypoints: t.row(vec![0.0, 0.0]),
            headings: vec![],
            step_speeds: vec![],
            traj_feature: t.row(vec![0.0; cfg.hidden]),
            ctrl_params: vec![t.row(p.to_vec())],
            ctrl_features: vec![t.row(lab.ctrl_features[0].clone())],
            traj_hidden: vec![],
            ctrl_hidden: vec![],
        };
        let q = lab.control_seq[0];
        let want = beta_kl(p[0], p[2], q[0], q[1]).unwrap() + beta_kl(p[1], p[3], q[2], q[3]).unwrap();
        let l = loss_ctrl(&t, &out, &lab, 0.05).unwrap();
        assert!((t.scalar(l) - want).abs() < 1e-12);
    }

    #[test]
    fn dtcp_loss_gradient_matches_differences() {
        let cfg = small_config();
        let agent = Agent::new(cfg, &mut RngStream::new(7, 0));
        let lab = label(2, 2, &cfg);
        let report = grad_check(&agent.params, 1e-5, None, |t, p| {
            let x = inputs(t, cfg.l_z);
            let out = agent.forward(t, p, &x, 2, 2)?;
            loss_dtcp(t, &out, &lab, &LossWeights::default())
        })
        .unwrap();
        assert!(report.fraction_within(1e-4) >= 0.95, "max {}", report.max_rel_error);
    }

    #[test]
    fn gaussian_nll_is_scaled_squared_distance() {
        use statrs::distribution::{Continuous, Normal};
        let a = [0.3, -1.2, 2.0];
        let b = [0.1, -0.7, 1.4];
        let unit = Normal::new(0.0, 1.0).unwrap();
        let nll: f64 = a.iter().zip(&b).map(|(x, y)| -unit.ln_pdf(x - y)).sum();
        let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let constant = 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((nll - (0.5 * sq + constant)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fusion_is_convex(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            turning in any::<bool>(),
            delta in 0u64..30,
            lc in 0.5f64..=1.0,
        ) {
            let traj: Vec<Command> = a.iter().map(|v| cmd(*v)).collect();
            let ctrl: Vec<Command> = b.iter().map(|v| cmd(*v)).collect();
            let cfg = FusionConfig { lambda_c: lc, ..Default::default() };
            let (c, case) = combine_with_case(&traj, &ctrl, turning, delta, &cfg).unwrap();
            let i = case.index(3);
            let lo = traj[i].steer.min(ctrl[i].steer) - 1e-12;
            let hi = traj[i].steer.max(ctrl[i].steer) + 1e-12;
            prop_assert!(c.steer >= lo && c.steer <= hi);
        }

        #[test]
        fn beta_kl_nonnegative(a1 in 0.5f64..10.0, b1 in 0.5f64..10.0, a2 in 0.5f64..10.0, b2 in 0.5f64..10.0) {
            prop_assert!(beta_kl(a1, b1, a2, b2).unwrap() >= -1e-12);
        }

        #[test]
        fn horizons_up_to_limits(l_p in 0usize..=24, l_w in 0usize..=8) {
            let cfg = small_config();
            let agent = Agent::new(cfg, &mut RngStream::new(3, 0));
            let z = ComplexVec::zeros(cfg.l_z);
            let h = ComplexVec::from(vec![num_complex::Complex64::new(1.0, 0.0); cfg.l_z]);
            let out = agent.run(&z, &state(), &h, l_p, l_w).unwrap();
            prop_assert_eq!(out.waypoints.len(), l_p + l_w);
            prop_assert_eq!(out.ctrl_commands.len(), l_p + 1);
            prop_assert_eq!(out.ctrl_hidden_seq.len(), l_p);
        }
    }
}
