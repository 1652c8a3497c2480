//! The time-slotted communication, computing and control loop.
//!
//! Every slot the vehicle captures a frame, encodes it and sends the selected
//! symbols over the fading channel. Frames reach the edge after the encode and
//! uplink delays; the edge reads the capture timestamp to recover `δ_eu`,
//! picks the prediction horizon, runs the agent and fuses the two command
//! sequences. The command becomes executable after the compute, downlink and
//! execution delays. The vehicle executes the newest executable command and
//! holds the previous one otherwise.

use crate::channel::{sample_taps, transmit, ChannelMode, ChannelParams, DEGENERATE_GAIN};
use crate::dtcp::{combine_with_case, Agent, FusionConfig, MAX_HORIZON};
use crate::env::{
    beta_mode_command, expert_action, Command, EnvConfig, Episode, EpisodeTrace, ExpertController, IssuedCommand, Scene,
    SlotRecord, StateInfo, Weather, WorldState,
};
use crate::jscc::{apply_selection, random_indices, select_symbols, JsccEncoder, SymbolFrame};
use crate::numerics::{ComplexVec, RngStream};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// The five delay components, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayProfile {
    pub encode: u64,
    pub uplink: u64,
    pub compute: u64,
    pub downlink: u64,
    pub execute: u64,
}

impl DelayProfile {
    pub fn new(encode: u64, uplink: u64, compute: u64, downlink: u64, execute: u64) -> Self {
        DelayProfile {
            encode,
            uplink,
            compute,
            downlink,
            execute,
        }
    }

    /// End-to-end delay `δ`.
    pub fn total(&self) -> u64 {
        self.encode + self.uplink + self.compute + self.downlink + self.execute
    }

    /// Capture-to-edge delay `δ_eu`.
    pub fn eu(&self) -> u64 {
        self.encode + self.uplink
    }

    /// Edge-to-actuation delay `δ_a + δ_d + δ_c`.
    pub fn after_edge(&self) -> u64 {
        self.compute + self.downlink + self.execute
    }

    /// Spreads `total` slots over the components, filling uplink and
    /// downlink first.
    pub fn from_total(total: u64) -> Self {
        let mut parts = [0u64; 5];
        let order = [1, 3, 0, 2, 4];
        for i in 0..total {
            parts[order[(i % 5) as usize]] += 1;
        }
        DelayProfile::new(parts[0], parts[1], parts[2], parts[3], parts[4])
    }
}

/// `δ − l_p`; negative when the horizon overshoots the delay.
pub fn perceived_delay(delta: u64, l_p: usize) -> i64 {
    delta as i64 - l_p as i64
}

/// Packets in flight, released once the clock reaches their ready slot.
/// Packets with equal ready slots leave in insertion order.
#[derive(Debug, Clone)]
pub struct InFlightQueue<T> {
    packets: VecDeque<(T, u64)>,
}

impl<T> Default for InFlightQueue<T> {
    fn default() -> Self {
        InFlightQueue { packets: VecDeque::new() }
    }
}

impl<T> InFlightQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, payload: T, ready: u64) {
        let at = self.packets.partition_point(|(_, r)| *r <= ready);
        self.packets.insert(at, (payload, ready));
    }

    pub fn pop_ready(&mut self, clock: u64) -> Vec<T> {
        let n = self.packets.partition_point(|(_, r)| *r <= clock);
        self.packets.drain(..n).map(|(p, _)| p).collect()
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// Which symbols of a frame are transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Full,
    TopEnergy(usize),
    Random(usize),
}

impl Selection {
    pub fn budget(&self, l_z: usize) -> usize {
        match *self {
            Selection::Full => l_z,
            Selection::TopEnergy(l) | Selection::Random(l) => l,
        }
    }

    pub fn apply(&self, frame: &SymbolFrame, rng: &mut RngStream) -> Result<SymbolFrame> {
        match *self {
            Selection::Full => Ok(frame.clone()),
            Selection::TopEnergy(l) => select_symbols(frame, l),
            Selection::Random(l) => Ok(apply_selection(frame, random_indices(rng, frame.symbols.len(), l)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonPolicy {
    /// `l_p = δ`, capped at [`MAX_HORIZON`].
    MatchDelay,
    Fixed(usize),
}

impl HorizonPolicy {
    pub fn horizon(&self, delta: u64) -> usize {
        match *self {
            HorizonPolicy::MatchDelay => (delta as usize).min(MAX_HORIZON),
            HorizonPolicy::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub id: u8,
    pub selection: Selection,
    pub horizon: HorizonPolicy,
    pub fusion: FusionConfig,
}

/// The five evaluated configurations.
pub fn dtcp_variant(id: u8, l_z: usize) -> Result<VariantConfig> {
    let fusion = |delta_t, force_turning| FusionConfig {
        delta_t,
        force_turning,
        ..FusionConfig::default()
    };
    let (selection, horizon, fusion) = match id {
        1 => (Selection::Full, HorizonPolicy::MatchDelay, fusion(Some(10), false)),
        2 => (Selection::TopEnergy(l_z / 2), HorizonPolicy::MatchDelay, fusion(Some(10), false)),
        3 => (Selection::Full, HorizonPolicy::MatchDelay, fusion(Some(0), false)),
        4 => (Selection::Full, HorizonPolicy::Fixed(0), fusion(None, false)),
        5 => (Selection::Full, HorizonPolicy::MatchDelay, fusion(Some(0), true)),
        _ => return Err(Error::Usage(format!("variant id {id} outside 1..=5"))),
    };
    Ok(VariantConfig {
        id,
        selection,
        horizon,
        fusion,
    })
}

/// Equalised frame at the edge, zero-filled to `l_z`. `h` is zero at
/// positions that were not transmitted or were lost to a degenerate gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub zhat: ComplexVec,
    pub h: ComplexVec,
    pub timestamp: u64,
}

/// Sends the selected symbols of `frame` on consecutive subcarriers through
/// a fresh block-fading realisation and equalises them.
pub fn receive_frame(frame: &SymbolFrame, params: &ChannelParams, mode: ChannelMode, rng: &mut RngStream) -> Result<ReceivedFrame> {
    let l_z = frame.symbols.len();
    let d = frame.indices();
    let payload = frame.payload();
    let mut zhat = ComplexVec::zeros(l_z);
    let mut h = ComplexVec::zeros(l_z);
    if payload.is_empty() {
        return Ok(ReceivedFrame {
            zhat,
            h,
            timestamp: frame.timestamp,
        });
    }
    let taps = sample_taps(params, rng)?;
    let (rx, gains) = transmit(mode, &payload, &taps, params, rng)?;
    let zero = Complex64::new(0.0, 0.0);
    for (j, &i) in d.iter().enumerate() {
        let g = gains[j];
        if g.norm() < DEGENERATE_GAIN {
            zhat[i] = zero;
            h[i] = zero;
        } else {
            zhat[i] = g.conj() * rx[j] / g.norm_sqr();
            h[i] = g;
        }
    }
    Ok(ReceivedFrame {
        zhat,
        h,
        timestamp: frame.timestamp,
    })
}

/// Everything fixed for one closed-loop episode except the driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub channel: ChannelParams,
    pub channel_mode: ChannelMode,
    pub delays: DelayProfile,
    /// Uplink jitter: each frame's uplink delay is drawn uniformly from
    /// `uplink ± jitter`, floored at zero.
    pub jitter: u64,
    pub l_w: usize,
    pub route_id: u64,
    pub weather: Weather,
    pub start_lateral: f64,
    pub start_heading: f64,
}

impl RunConfig {
    pub fn new(env: EnvConfig, channel: ChannelParams, delays: DelayProfile, route_id: u64) -> Self {
        RunConfig {
            env,
            channel,
            channel_mode: ChannelMode::FrequencyDomain,
            delays,
            jitter: 0,
            l_w: 4,
            route_id,
            weather: Weather::clear(),
            start_lateral: 0.0,
            start_heading: 0.0,
        }
    }
}

/// What drives the edge.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'a> {
    Learned { encoder: &'a JsccEncoder, agent: &'a Agent },
    /// The scripted expert reading the true state at capture time; predicted
    /// commands come from its own noise-free rollout.
    Expert,
}

enum Uplink {
    Symbols(ReceivedFrame, StateInfo),
    Snapshot(WorldState, f64, StateInfo),
}

impl Uplink {
    fn state(&self) -> &StateInfo {
        match self {
            Uplink::Symbols(_, m) | Uplink::Snapshot(_, _, m) => m,
        }
    }
}

/// Runs one closed-loop episode.
pub fn run_episode(cfg: &RunConfig, driver: Driver<'_>, variant: &VariantConfig, rng: &mut RngStream) -> Result<EpisodeTrace> {
    cfg.env.validate()?;
    cfg.channel.validate()?;
    variant.fusion.validate()?;
    if let Driver::Learned { encoder, agent } = driver {
        let l_z = encoder.config.l_z;
        if agent.config.l_z != l_z {
            return Err(Error::Usage(format!(
                "encoder emits {l_z} symbols but the agent reads {}",
                agent.config.l_z
            )));
        }
        let l = variant.selection.budget(l_z);
        if l == 0 || l > l_z {
            return Err(Error::Usage(format!("symbol budget {l} outside 1..={l_z}")));
        }
    }
    if let HorizonPolicy::Fixed(n) = variant.horizon {
        if n > MAX_HORIZON {
            return Err(Error::Usage(format!("horizon {n} exceeds {MAX_HORIZON}")));
        }
    }

    let mut env_rng = rng.fork(1);
    let mut chan_rng = rng.fork(2);
    let mut sel_rng = rng.fork(3);
    let mut jitter_rng = rng.fork(4);
    let mut enc_rng = rng.fork(5);

    let scene = Scene::new(&cfg.env, cfg.route_id);
    let mut ep = Episode::new(&cfg.env, scene, cfg.weather, cfg.start_lateral, cfg.start_heading);
    let d = cfg.delays;
    let mut uplink: InFlightQueue<Uplink> = InFlightQueue::new();
    let mut downlink: InFlightQueue<IssuedCommand> = InFlightQueue::new();
    let mut expert_ctl = ExpertController::default();
    let mut executed = Command::default();
    let mut executed_origin: Option<u64> = None;
    let mut records = Vec::new();

    while !ep.is_done() {
        let t = ep.world().slot;
        let m = ep.state_info();

        // vehicle: capture and send
        let packet = match driver {
            Driver::Learned { encoder, .. } => {
                let frame = encoder.encode(&ep.observe(), &mut enc_rng, false, t)?;
                let frame = variant.selection.apply(&frame, &mut sel_rng)?;
                Uplink::Symbols(receive_frame(&frame, &cfg.channel, cfg.channel_mode, &mut chan_rng)?, m)
            }
            Driver::Expert => Uplink::Snapshot(*ep.world(), ep.progress(), m),
        };
        let mut up = d.uplink;
        if cfg.jitter > 0 {
            let j = jitter_rng.below(2 * cfg.jitter as usize + 1) as i64 - cfg.jitter as i64;
            up = (up as i64 + j).max(0) as u64;
        }
        uplink.push(packet, t + d.encode + up);

        // edge: process arrivals
        let mut arrivals = Vec::new();
        let mut issued = Vec::new();
        for packet in uplink.pop_ready(t) {
            let m = *packet.state();
            let delta_eu = t - m.timestamp;
            let delta = delta_eu + d.after_edge();
            let l_p = variant.horizon.horizon(delta);
            let command = match packet {
                Uplink::Symbols(rx, m) => {
                    let Driver::Learned { agent, .. } = driver else {
                        unreachable!("symbol packets come from a learned driver")
                    };
                    let out = agent.run(&rx.zhat, &m, &rx.h, l_p, cfg.l_w)?;
                    let traj = out.traj_commands(l_p, m.speed, &agent.config.pid);
                    let ctrl = out.ctrl_decoded();
                    combine_with_case(&traj, &ctrl, m.nav_command.is_turn(), delta, &variant.fusion)?.0
                }
                Uplink::Snapshot(state, progress, _) => {
                    let now = expert_ctl.command(&state, &ep.scene, progress, &cfg.env.expert, &cfg.env.vehicle);
                    if l_p == 0 {
                        now
                    } else {
                        match expert_action(&cfg.env, &ep.scene, &state, progress, &expert_ctl, l_p, cfg.l_w) {
                            Ok(label) => {
                                let q = label.control_seq[l_p];
                                Command::new(beta_mode_command(q[0], q[1]), beta_mode_command(q[2], q[3]))
                            }
                            Err(Error::EpisodeFinished) => now,
                            Err(e) => return Err(e),
                        }
                    }
                }
            };
            arrivals.push(m.timestamp);
            let cmd = IssuedCommand {
                origin: m.timestamp,
                ready: t + d.after_edge(),
                horizon: l_p as u64,
                command,
            };
            issued.push(cmd);
            downlink.push(cmd, cmd.ready);
        }

        // vehicle: newest executable command, else hold
        for c in downlink.pop_ready(t) {
            if executed_origin.is_none_or(|o| c.origin > o) {
                executed = c.command;
                executed_origin = Some(c.origin);
            }
        }

        let (col, off) = (ep.collisions(), ep.offtrack_events());
        let mut rec = SlotRecord {
            slot: t,
            position: ep.world().position,
            heading: ep.world().heading,
            speed: ep.world().speed,
            progress: ep.progress(),
            cte: ep.cte(),
            captured: Some(t),
            arrivals,
            issued,
            executed,
            executed_origin,
            collisions: 0,
            offtrack: 0,
        };
        ep.advance(executed, &mut env_rng);
        rec.collisions = ep.collisions() - col;
        rec.offtrack = ep.offtrack_events() - off;
        records.push(rec);
    }
    Ok(ep.trace(records))
}

/// Checks a trace against the loop's timing rules and returns every
/// violation found. `jitter` widens the uplink bound.
pub fn audit_trace(trace: &EpisodeTrace, delays: &DelayProfile, jitter: u64) -> Vec<String> {
    let mut bad = Vec::new();
    let min_eu = delays.encode + delays.uplink.saturating_sub(jitter);
    let mut issued_at = std::collections::HashMap::new();
    for r in &trace.slots {
        for &a in &r.arrivals {
            if r.slot < a + min_eu {
                bad.push(format!("slot {}: frame {a} arrived before {}", r.slot, a + min_eu));
            }
        }
        for c in &r.issued {
            if c.ready < r.slot + delays.after_edge() {
                bad.push(format!("slot {}: command {} ready too early at {}", r.slot, c.origin, c.ready));
            }
            issued_at.insert(c.origin, *c);
        }
    }
    let mut prev: Option<&SlotRecord> = None;
    for r in &trace.slots {
        let changed = prev.is_none_or(|p| p.executed_origin != r.executed_origin);
        if let Some(o) = r.executed_origin {
            match issued_at.get(&o) {
                None => bad.push(format!("slot {}: executed command from {o} was never issued", r.slot)),
                Some(c) => {
                    if r.slot < c.ready {
                        bad.push(format!("slot {}: executed command from {o} before ready slot {}", r.slot, c.ready));
                    }
                    if changed && jitter == 0 && r.slot - o != delays.total() {
                        bad.push(format!(
                            "slot {}: command from {o} executed after {} slots, expected {}",
                            r.slot,
                            r.slot - o,
                            delays.total()
                        ));
                    }
                    if r.executed != c.command {
                        bad.push(format!("slot {}: executed value differs from the issued one", r.slot));
                    }
                }
            }
        }
        if let Some(p) = prev {
            if !changed && p.executed != r.executed {
                bad.push(format!("slot {}: command changed without a new arrival", r.slot));
            }
        }
        prev = Some(r);
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtcp::AgentConfig;
    use crate::env::score;
    use crate::jscc::EncoderConfig;
    use proptest::prelude::*;

    #[test]
    fn delay_arithmetic() {
        let d = DelayProfile::new(1, 3, 1, 2, 1);
        assert_eq!(d.eu(), 4);
        assert_eq!(d.total(), 8);
        assert_eq!(HorizonPolicy::MatchDelay.horizon(d.total()), 8);
        assert_eq!(perceived_delay(20, 20), 0);
        assert_eq!(perceived_delay(8, 0), 8);
        assert_eq!(perceived_delay(10, 4), 6);
        for total in 0..30 {
            assert_eq!(DelayProfile::from_total(total).total(), total);
        }
    }

    #[test]
    fn variants() {
        let v1 = dtcp_variant(1, 48).unwrap();
        assert_eq!(v1.selection, Selection::Full);
        assert_eq!(v1.horizon, HorizonPolicy::MatchDelay);
        assert_eq!(v1.fusion.delta_t, Some(10));
        assert_eq!(dtcp_variant(2, 48).unwrap().selection, Selection::TopEnergy(24));
        assert_eq!(dtcp_variant(4, 48).unwrap().horizon, HorizonPolicy::Fixed(0));
        assert_eq!(dtcp_variant(4, 48).unwrap().fusion.delta_t, None);
        let (v3, v5) = (dtcp_variant(3, 48).unwrap(), dtcp_variant(5, 48).unwrap());
        assert_eq!(
            VariantConfig {
                id: 5,
                fusion: FusionConfig {
                    force_turning: true,
                    ..v3.fusion
                },
                ..v3
            },
            v5
        );
        assert!(matches!(dtcp_variant(0, 48), Err(Error::Usage(_))));
        assert!(matches!(dtcp_variant(6, 48), Err(Error::Usage(_))));
    }

    #[test]
    fn queue_releases_in_order() {
        let mut q = InFlightQueue::new();
        q.push("a", 5);
        q.push("b", 3);
        q.push("c", 5);
        q.push("d", 4);
        assert!(q.pop_ready(2).is_empty());
        assert_eq!(q.pop_ready(4), vec!["b", "d"]);
        assert_eq!(q.pop_ready(9), vec!["a", "c"]);
        assert!(q.is_empty());
    }

    #[test]
    fn expert_without_delay_scores_high() {
        let env = EnvConfig::default();
        let v = dtcp_variant(4, 48).unwrap();
        for route in 0..4 {
            let cfg = RunConfig::new(env, ChannelParams::default(), DelayProfile::default(), route);
            let trace = run_episode(&cfg, Driver::Expert, &v, &mut RngStream::new(9, route)).unwrap();
            assert!(score(&trace) >= 95.0, "route {route}: {}", score(&trace));
            assert!(audit_trace(&trace, &cfg.delays, 0).is_empty());
        }
    }

    #[test]
    fn delayed_expert_trace_passes_audit() {
        let env = EnvConfig::default();
        let d = DelayProfile::new(1, 3, 1, 2, 1);
        let cfg = RunConfig::new(env, ChannelParams::default(), d, 1);
        let trace = run_episode(&cfg, Driver::Expert, &dtcp_variant(1, 48).unwrap(), &mut RngStream::new(4, 0)).unwrap();
        let bad = audit_trace(&trace, &d, 0);
        assert!(bad.is_empty(), "{bad:?}");
        let executed: Vec<_> = trace.slots.iter().filter(|r| r.executed_origin.is_some()).collect();
        assert!(!executed.is_empty());
        assert!(trace.slots[..8].iter().all(|r| r.executed_origin.is_none()));
        for r in &trace.slots[8..] {
            assert_eq!(r.executed_origin, Some(r.slot - 8));
        }
        // every issued command was computed for the full delay
        assert!(trace.slots.iter().flat_map(|r| &r.issued).all(|c| c.horizon == 8));
    }

    #[test]
    fn audit_flags_tampering() {
        let env = EnvConfig::default();
        let d = DelayProfile::new(0, 2, 0, 1, 0);
        let cfg = RunConfig::new(env, ChannelParams::default(), d, 0);
        let mut trace = run_episode(&cfg, Driver::Expert, &dtcp_variant(4, 48).unwrap(), &mut RngStream::new(1, 0)).unwrap();
        assert!(audit_trace(&trace, &d, 0).is_empty());
        trace.slots[20].executed.steer += 0.1;
        assert!(!audit_trace(&trace, &d, 0).is_empty());
    }

    #[test]
    fn jittered_episode_respects_causality() {
        let env = EnvConfig::default();
        let d = DelayProfile::new(1, 3, 1, 1, 1);
        let mut cfg = RunConfig::new(env, ChannelParams::default(), d, 2);
        cfg.jitter = 2;
        let trace = run_episode(&cfg, Driver::Expert, &dtcp_variant(1, 48).unwrap(), &mut RngStream::new(3, 0)).unwrap();
        let bad = audit_trace(&trace, &d, 2);
        assert!(bad.is_empty(), "{bad:?}");
    }

    fn tiny_learned() -> (JsccEncoder, Agent) {
        let mut rng = RngStream::new(5, 0);
        let enc = JsccEncoder::new(
            EncoderConfig {
                hidden: 8,
                l_z: 12,
                ..Default::default()
            },
            &mut rng,
        );
        let agent = Agent::new(
            AgentConfig {
                l_z: 12,
                trunk_width: 8,
                state_width: 4,
                hidden: 8,
                ctrl_feature: 4,
                ..Default::default()
            },
            &mut rng,
        );
        (enc, agent)
    }

    #[test]
    fn learned_episode_is_reproducible_and_causal() {
        let (enc, agent) = tiny_learned();
        let mut env = EnvConfig::default();
        env.time_limit_factor = 0.2;
        let d = DelayProfile::from_total(6);
        let cfg = RunConfig::new(env, ChannelParams::default().with_snr_db(10.0), d, 0);
        let driver = Driver::Learned {
            encoder: &enc,
            agent: &agent,
        };
        let v = dtcp_variant(2, 12).unwrap();
        let a = run_episode(&cfg, driver, &v, &mut RngStream::new(8, 0)).unwrap();
        let b = run_episode(&cfg, driver, &v, &mut RngStream::new(8, 0)).unwrap();
        assert_eq!(a, b);
        assert!(audit_trace(&a, &d, 0).is_empty());
    }

    #[test]
    fn contradictory_budget_is_a_usage_error() {
        let (enc, agent) = tiny_learned();
        let cfg = RunConfig::new(EnvConfig::default(), ChannelParams::default(), DelayProfile::default(), 0);
        let v = VariantConfig {
            selection: Selection::TopEnergy(13),
            ..dtcp_variant(1, 12).unwrap()
        };
        let driver = Driver::Learned {
            encoder: &enc,
            agent: &agent,
        };
        assert!(matches!(run_episode(&cfg, driver, &v, &mut RngStream::new(0, 0)), Err(Error::Usage(_))));
    }

    #[test]
    fn receive_frame_zero_fills_unselected() {
        let mut rng = RngStream::new(2, 0);
        let symbols = ComplexVec::new((0..8).map(|i| Complex64::new(i as f64, 1.0)).collect());
        let frame = SymbolFrame {
            symbols,
            sigma: vec![0.0; 8],
            timestamp: 3,
            selected: None,
        };
        let frame = select_symbols(&frame, 3).unwrap();
        let params = ChannelParams {
            noise_var: 0.0,
            ..Default::default()
        };
        let rx = receive_frame(&frame, &params, ChannelMode::FrequencyDomain, &mut rng).unwrap();
        for i in 0..8 {
            if i >= 5 {
                assert!((rx.zhat[i] - frame.symbols[i]).norm() < 1e-9);
                assert!(rx.h[i].norm() > 0.0);
            } else {
                assert_eq!(rx.zhat[i], Complex64::new(0.0, 0.0));
                assert_eq!(rx.h[i], Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(rx.timestamp, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn clock_conservation(e in 0u64..3, u in 0u64..4, a in 0u64..2, dl in 0u64..3, c in 0u64..2) {
            let mut env = EnvConfig::default();
            env.time_limit_factor = 0.15;
            let d = DelayProfile::new(e, u, a, dl, c);
            let cfg = RunConfig::new(env, ChannelParams::default(), d, 3);
            let trace = run_episode(&cfg, Driver::Expert, &dtcp_variant(1, 48).unwrap(), &mut RngStream::new(6, 0)).unwrap();
            prop_assert!(audit_trace(&trace, &d, 0).is_empty());
        }

        #[test]
        fn queue_never_releases_early(readies in prop::collection::vec(0u64..50, 1..40), clock in 0u64..60) {
            let mut q = InFlightQueue::new();
            for (i, r) in readies.iter().enumerate() {
                q.push((i, *r), *r);
            }
            let out = q.pop_ready(clock);
            prop_assert!(out.iter().all(|(_, r)| *r <= clock));
            prop_assert_eq!(out.len(), readies.iter().filter(|r| **r <= clock).count());
            for w in out.windows(2) {
                prop_assert!(w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
        }
    }
}
