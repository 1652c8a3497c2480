//! Joint behaviour-cloning training of the encoder and the agent under the
//! variational information-bottleneck objective.
//!
//! Each example draws its own encoder noise, SNR, channel realisation and
//! (optionally) a top-energy symbol budget. The channel is reparameterised:
//! the equalised symbols are `ẑ = z + e` with the effective noise `e`
//! computed numerically and held constant, so gradients pass straight
//! through the channel. The rate term is the KL between the Gaussian of the
//! received symbols, with variance `σ² + σ_n²/(2|h|²)` per real dimension,
//! and a standard normal, summed over the transmitted symbols.

use crate::channel::{snr_to_noise_var, ChannelMode, ChannelParams};
use crate::dtcp::{loss_dtcp, Agent, AgentConfig, AgentInputs, LossWeights};
use crate::env::{Dataset, ExpertLabel, Record};
use crate::jscc::{top_energy_indices, EncoderConfig, JsccEncoder, SymbolFrame};
use crate::numerics::{ComplexVec, ParamStore, RngStream, Tape, Tensor, Var};
use crate::pipeline::receive_frame;
use crate::vib::kl_diag_gaussian_tape;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub beta: f64,
    pub l_p: usize,
    pub l_w: usize,
    pub seed: u64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
    /// Fraction of examples sent with a random top-energy symbol budget.
    pub selection_fraction: f64,
    pub channel: ChannelParams,
    pub channel_mode: ChannelMode,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 8,
            lr: 1e-3,
            lr_decay: 0.8,
            beta: 1e-4,
            l_p: 20,
            l_w: 4,
            seed: 0,
            snr_min_db: 0.0,
            snr_max_db: 20.0,
            optimizer: Optimizer::Adam,
            clip_norm: 5.0,
            selection_fraction: 0.0,
            channel: ChannelParams::default(),
            channel_mode: ChannelMode::FrequencyDomain,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be > 0");
        }
        if !(self.lr >= 0.0) || !(self.lr_decay > 0.0) {
            return bad("learning rate must be >= 0 and its decay > 0");
        }
        if !(self.snr_max_db >= self.snr_min_db) {
            return bad("snr_max_db must be >= snr_min_db");
        }
        if !(0.0..=1.0).contains(&self.selection_fraction) {
            return bad("selection_fraction must lie in [0, 1]");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        self.channel.validate()
    }
}

/// Encoder and agent trained together.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: JsccEncoder,
    pub agent: Agent,
}

impl Model {
    pub fn new(encoder: EncoderConfig, agent: AgentConfig, seed: u64) -> Result<Self> {
        if encoder.l_z != agent.l_z {
            return Err(Error::Usage(format!(
                "encoder emits {} symbols but the agent reads {}",
                encoder.l_z, agent.l_z
            )));
        }
        let mut rng = RngStream::new(seed, 0x1417);
        Ok(Model {
            encoder: JsccEncoder::new(encoder, &mut rng),
            agent: Agent::new(agent, &mut rng),
        })
    }

    pub fn param_norms(&self) -> (f64, f64) {
        (self.encoder.params.norm(), self.agent.params.norm())
    }
}

/// Random quantities of one training example.
#[derive(Debug, Clone)]
pub struct ExampleDraws {
    pub eps: Vec<f64>,
    pub snr_db: f64,
    /// Symbol budget for top-energy selection, `None` sends all symbols.
    pub budget: Option<usize>,
    pub channel_rng: RngStream,
}

impl ExampleDraws {
    pub fn sample(cfg: &TrainConfig, l_z: usize, rng: &mut RngStream) -> Self {
        let eps = (0..2 * l_z).map(|_| rng.normal()).collect();
        let snr_db = rng.uniform_range(cfg.snr_min_db, cfg.snr_max_db);
        let budget = (rng.uniform() < cfg.selection_fraction).then(|| {
            let grid = budget_grid(l_z);
            grid[rng.below(grid.len())]
        });
        ExampleDraws {
            eps,
            snr_db,
            budget,
            channel_rng: rng.fork(0xC4A1),
        }
    }
}

/// The symbol-budget grid `{l_z/6, 2l_z/6, …, l_z}` (at least one symbol).
pub fn budget_grid(l_z: usize) -> Vec<usize> {
    (1..=6).map(|i| (i * l_z / 6).max(1)).collect()
}

/// First `l_p + l_w` waypoints and `l_p + 1` commands of a longer label.
pub fn truncate_label(label: &ExpertLabel, l_p: usize, l_w: usize) -> Result<ExpertLabel> {
    if label.waypoints.len() < l_p + l_w || label.control_seq.len() < l_p + 1 || label.ctrl_features.len() < l_p + 1 {
        return Err(Error::Usage(format!(
            "label holds {} waypoints and {} commands, training needs {} and {}",
            label.waypoints.len(),
            label.control_seq.len(),
            l_p + l_w,
            l_p + 1
        )));
    }
    Ok(ExpertLabel {
        waypoints: label.waypoints[..l_p + l_w].to_vec(),
        control_seq: label.control_seq[..=l_p].to_vec(),
        traj_feature: label.traj_feature.clone(),
        ctrl_features: label.ctrl_features[..=l_p].to_vec(),
        target_speed: label.target_speed,
        value: label.value,
    })
}

/// Tape handles of one example's objective.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub task: Var,
    pub kl: Var,
    /// `task + β·kl`.
    pub total: Var,
}

/// Builds the per-example objective on `t`.
pub fn example_loss(
    t: &Tape<'_>,
    pe: &crate::numerics::Bound,
    pa: &crate::numerics::Bound,
    model: &Model,
    record: &Record,
    label: &ExpertLabel,
    draws: &ExampleDraws,
    cfg: &TrainConfig,
) -> Result<ExampleLoss> {
    let l_z = model.encoder.config.l_z;
    let x = t.row(record.raster_f64());
    let enc = model.encoder.forward(t, pe, x, Some(&draws.eps))?;
    let z = ComplexVec::from_interleaved(&t.value(enc.z));
    let selected = match draws.budget {
        Some(l) if l < l_z => Some(top_energy_indices(&z, l)?),
        _ => None,
    };
    let d: Vec<usize> = selected.clone().unwrap_or_else(|| (0..l_z).collect());
    let frame = SymbolFrame {
        symbols: z.clone(),
        sigma: Vec::new(),
        timestamp: record.state.timestamp,
        selected,
    };
    let params = ChannelParams {
        noise_var: snr_to_noise_var(draws.snr_db, cfg.channel.p_target),
        ..cfg.channel
    };
    let rx = receive_frame(&frame, &params, cfg.channel_mode, &mut draws.channel_rng.clone())?;

    // ẑ = mask ⊙ z + e with the effective channel noise e held constant
    let mut mask = vec![0.0; 2 * l_z];
    let mut e = vec![0.0; 2 * l_z];
    let mut live = Vec::with_capacity(d.len());
    for &i in &d {
        if rx.h[i].norm_sqr() > 0.0 {
            mask[2 * i] = 1.0;
            mask[2 * i + 1] = 1.0;
            e[2 * i] = rx.zhat[i].re - z[i].re;
            e[2 * i + 1] = rx.zhat[i].im - z[i].im;
            live.push(i);
        }
    }
    let zhat = t.add(t.mul(enc.z, t.row(mask))?, t.row(e))?;

    let kl = if live.is_empty() {
        t.row(vec![0.0])
    } else {
        // gather the live symbols' means and scales
        let n = live.len();
        let mut gather_mu = vec![0.0; 2 * l_z * 2 * n];
        let mut gather_sigma = vec![0.0; l_z * 2 * n];
        let mut noise = vec![0.0; 2 * n];
        for (j, &i) in live.iter().enumerate() {
            gather_mu[(2 * i) * 2 * n + 2 * j] = 1.0;
            gather_mu[(2 * i + 1) * 2 * n + 2 * j + 1] = 1.0;
            gather_sigma[i * 2 * n + 2 * j] = 1.0;
            gather_sigma[i * 2 * n + 2 * j + 1] = 1.0;
            let v = params.noise_var / (2.0 * rx.h[i].norm_sqr());
            noise[2 * j] = v;
            noise[2 * j + 1] = v;
        }
        let mu = t.matmul(enc.mean, t.constant(2 * l_z, 2 * n, gather_mu)?)?;
        let sigma = t.matmul(enc.sigma, t.constant(l_z, 2 * n, gather_sigma)?)?;
        let var = t.add(t.square(sigma), t.row(noise))?;
        kl_diag_gaussian_tape(t, mu, var)?
    };

    let h: Vec<num_complex::Complex64> = rx.h.to_vec();
    let mut inputs = AgentInputs::constants(t, &vec![0.0; 2 * l_z], &h, &record.state);
    inputs.zhat = zhat;
    let out = model.agent.forward(t, pa, &inputs, cfg.l_p, cfg.l_w)?;
    let task = loss_dtcp(t, &out, label, &cfg.weights)?;
    let total = t.add(task, t.scale(kl, cfg.beta))?;
    Ok(ExampleLoss { task, kl, total })
}

struct ExampleResult {
    enc_grads: Vec<Vec<f64>>,
    agent_grads: Vec<Vec<f64>>,
    task: f64,
    kl: f64,
    total: f64,
}

fn example_draws(cfg: &TrainConfig, l_z: usize, epoch: u64, index: usize) -> ExampleDraws {
    let mut rng = RngStream::derived(cfg.seed, &[0x7A41, epoch, index as u64]);
    ExampleDraws::sample(cfg, l_z, &mut rng)
}

fn run_example(model: &Model, record: &Record, draws: &ExampleDraws, cfg: &TrainConfig, grads: bool) -> Result<ExampleResult> {
    let label = truncate_label(&record.label, cfg.l_p, cfg.l_w)?;
    let t = Tape::new();
    let pe = t.bind(&model.encoder.params);
    let pa = t.bind(&model.agent.params);
    let loss = example_loss(&t, &pe, &pa, model, record, &label, draws, cfg)?;
    let mut enc_grads = Vec::new();
    let mut agent_grads = Vec::new();
    if grads {
        let g = t.backward(loss.total)?;
        enc_grads = model.encoder.params.grad_buffers();
        agent_grads = model.agent.params.grad_buffers();
        g.accumulate_into(&pe, &mut enc_grads);
        g.accumulate_into(&pa, &mut agent_grads);
    }
    Ok(ExampleResult {
        enc_grads,
        agent_grads,
        task: t.scalar(loss.task),
        kl: t.scalar(loss.kl),
        total: t.scalar(loss.total),
    })
}

/// Per-epoch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub task_loss: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Mean total loss of every batch, in order.
    pub batch_totals: Vec<f64>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["epoch", "task_loss", "kl", "total"]).map_err(err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.task_loss.to_string(),
                e.kl.to_string(),
                e.total.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    /// Mean of the first and last `window` batch totals.
    pub fn smoothed_ends(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.batch_totals.len();
        if n == 0 || window == 0 {
            return None;
        }
        let w = window.min(n);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.batch_totals[..w]), mean(&self.batch_totals[n - w..])))
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl AdamState {
    fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.grad_buffers(),
            v: store.grad_buffers(),
            step: 0,
        }
    }

    fn apply(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for (k, t) in store.tensors_mut().enumerate() {
            for (i, w) in t.values.iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
        }
    }
}

fn sgd(store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
    for (t, g) in store.tensors_mut().zip(grads) {
        for (w, d) in t.values.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
}

fn sq_norm(g: &[Vec<f64>]) -> f64 {
    g.iter().flatten().map(|x| x * x).sum()
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn check_dataset(dataset: &Dataset, cfg: &TrainConfig, l_z: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    if dataset.header.l_p < cfg.l_p || dataset.header.l_w < cfg.l_w && dataset.header.l_p + dataset.header.l_w < cfg.l_p + cfg.l_w {
        return Err(Error::Usage(format!(
            "dataset horizons (l_p={}, l_w={}) are shorter than training horizons (l_p={}, l_w={})",
            dataset.header.l_p, dataset.header.l_w, cfg.l_p, cfg.l_w
        )));
    }
    if dataset.header.raster_len() != crate::env::Observation::LEN || l_z == 0 {
        return Err(Error::Usage("dataset raster does not match the encoder input".into()));
    }
    Ok(())
}

/// Trains `model` in place and returns the loss history.
pub fn joint_train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let l_z = model.encoder.config.l_z;
    check_dataset(dataset, cfg, l_z)?;
    let mut adam_e = AdamState::new(&model.encoder.params);
    let mut adam_a = AdamState::new(&model.agent.params);
    let mut history = History::default();
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = RngStream::derived(cfg.seed, &[0x5F1E, epoch as u64]);
        shuffle_rng.shuffle(&mut order);
        let (mut task_sum, mut kl_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<ExampleResult>> = batch
                .par_iter()
                .map(|&i| {
                    let draws = example_draws(cfg, l_z, epoch as u64, i);
                    run_example(model, &dataset.records[i], &draws, cfg, true)
                })
                .collect();
            let mut ge = model.encoder.params.grad_buffers();
            let mut ga = model.agent.params.grad_buffers();
            let (mut bt, mut bk, mut bl) = (0.0, 0.0, 0.0);
            for r in results {
                let r = r?;
                add_into(&mut ge, &r.enc_grads);
                add_into(&mut ga, &r.agent_grads);
                bt += r.task;
                bk += r.kl;
                bl += r.total;
            }
            let k = batch.len() as f64;
            if !bl.is_finite() || !(sq_norm(&ge) + sq_norm(&ga)).is_finite() {
                let (ne, na) = model.param_norms();
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch}, batch ids {batch:?}, parameter norms encoder {ne:.4} agent {na:.4}"
                )));
            }
            for g in ge.iter_mut().chain(ga.iter_mut()) {
                for x in g.iter_mut() {
                    *x /= k;
                }
            }
            let norm = (sq_norm(&ge) + sq_norm(&ga)).sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                for g in ge.iter_mut().chain(ga.iter_mut()) {
                    for x in g.iter_mut() {
                        *x *= s;
                    }
                }
            }
            match cfg.optimizer {
                Optimizer::Adam => {
                    adam_e.apply(&mut model.encoder.params, &ge, lr);
                    adam_a.apply(&mut model.agent.params, &ga, lr);
                }
                Optimizer::Sgd => {
                    sgd(&mut model.encoder.params, &ge, lr);
                    sgd(&mut model.agent.params, &ga, lr);
                }
            }
            history.batch_totals.push(bl / k);
            task_sum += bt;
            kl_sum += bk;
            total_sum += bl;
        }
        let n = dataset.len() as f64;
        history.epochs.push(EpochStats {
            epoch,
            task_loss: task_sum / n,
            kl: kl_sum / n,
            total: total_sum / n,
        });
        lr *= cfg.lr_decay;
    }
    Ok(history)
}

/// Held-out loss of `model` on `records`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub examples: usize,
    pub task_loss: f64,
    pub kl: f64,
    pub total: f64,
}

/// Evaluates the training objective without updating parameters. Example
/// draws come from `seed`, so repeated calls agree exactly.
pub fn eval_offline(model: &Model, records: &[Record], cfg: &TrainConfig, seed: u64) -> Result<EvalMetrics> {
    if records.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty slice".into()));
    }
    let l_z = model.encoder.config.l_z;
    let cfg = TrainConfig { seed, ..*cfg };
    let results: Vec<Result<ExampleResult>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| run_example(model, r, &example_draws(&cfg, l_z, u64::MAX, i), &cfg, false))
        .collect();
    let (mut task, mut kl, mut total) = (0.0, 0.0, 0.0);
    for r in results {
        let r = r?;
        task += r.task;
        kl += r.kl;
        total += r.total;
    }
    let n = records.len() as f64;
    Ok(EvalMetrics {
        examples: records.len(),
        task_loss: task / n,
        kl: kl / n,
        total: total / n,
    })
}

const CKPT_MAGIC: &[u8; 4] = b"EDCK";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    encoder: EncoderConfig,
    agent: AgentConfig,
}

fn write_tensors<W: Write>(w: &mut W, store: &ParamStore) -> std::io::Result<()> {
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().expect("4 bytes")))
}

fn read_tensors<R: Read>(r: &mut R) -> Result<ParamStore> {
    let n = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = read_u32(r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Format("tensor name too long".into()));
        }
        let name = String::from_utf8(read_bytes(r, len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dims = read_u32(r)? as usize;
        if dims > 4 {
            return Err(Error::Format(format!("tensor {name} has {dims} dimensions")));
        }
        let shape: Vec<usize> = (0..dims)
            .map(|_| Ok(u64::from_le_bytes(read_bytes(r, 8)?.try_into().expect("8 bytes")) as usize))
            .collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        if count > 1 << 26 {
            return Err(Error::Format(format!("tensor {name} is implausibly large")));
        }
        let raw = read_bytes(r, 4 * count)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(&shape, values)?;
        store.add(&name, &t.shape, t.values)?;
    }
    Ok(store)
}

/// Writes the model as a header, the architecture as TOML and two named
/// tables of little-endian `f32` tensors.
pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = CheckpointConfig {
        encoder: model.encoder.config,
        agent: model.agent.config,
    };
    let text = toml::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: std::io::Error| Error::Format(e.to_string());
    w.write_all(CKPT_MAGIC).map_err(io)?;
    w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(text.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)?;
    write_tensors(&mut w, &model.encoder.params).map_err(io)?;
    write_tensors(&mut w, &model.agent.params).map_err(io)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let magic = read_bytes(&mut r, 4)?;
    if magic != CKPT_MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let text = String::from_utf8(read_bytes(&mut r, len)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let cfg: CheckpointConfig = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let enc = read_tensors(&mut r)?;
    let agent = read_tensors(&mut r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::Format(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
    }
    Ok(Model {
        encoder: JsccEncoder::with_params(cfg.encoder, enc)?,
        agent: Agent::with_params(cfg.agent, agent)?,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{collect_dataset, DataConfig, EnvConfig};
    use crate::numerics::grad_check;

    fn mini_model(seed: u64) -> Model {
        Model::new(
            EncoderConfig {
                hidden: 6,
                l_z: 6,
                ..Default::default()
            },
            AgentConfig {
                l_z: 6,
                trunk_width: 6,
                state_width: 3,
                hidden: 4,
                ctrl_feature: 3,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    fn mini_data() -> Dataset {
        let data = DataConfig {
            episodes: 1,
            routes: 1,
            stride: 60,
            l_p: 2,
            l_w: 2,
            ..Default::default()
        };
        let mut ds = collect_dataset(&EnvConfig::default(), &data, 4).unwrap();
        ds.records.truncate(6);
        // teacher widths follow the environment; shrink them to the mini agent
        for r in &mut ds.records {
            r.label.traj_feature.truncate(4);
            for f in &mut r.label.ctrl_features {
                f.truncate(3);
            }
        }
        ds
    }

    fn mini_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            epochs: 1,
            l_p: 2,
            l_w: 2,
            selection_fraction: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rate_leaves_parameters_unchanged() {
        let ds = mini_data();
        let mut model = mini_model(1);
        let before = (model.encoder.params.clone(), model.agent.params.clone());
        let cfg = TrainConfig { lr: 0.0, ..mini_cfg() };
        let h = joint_train(&mut model, &ds, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 1);
        assert_eq!(model.encoder.params, before.0);
        assert_eq!(model.agent.params, before.1);
    }

    #[test]
    fn one_step_moves_both_parameter_sets() {
        let ds = mini_data();
        let mut model = mini_model(2);
        let (e0, a0) = (model.encoder.params.clone(), model.agent.params.clone());
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: ds.len(),
            ..mini_cfg()
        };
        joint_train(&mut model, &ds, &cfg).unwrap();
        let diff = |a: &ParamStore, b: &ParamStore| {
            a.tensors()
                .zip(b.tensors())
                .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max)
        };
        assert!(diff(&e0, &model.encoder.params) > 0.0);
        assert!(diff(&a0, &model.agent.params) > 0.0);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = mini_data();
        let cfg = TrainConfig { epochs: 2, ..mini_cfg() };
        let mut a = mini_model(3);
        let mut b = mini_model(3);
        let ha = joint_train(&mut a, &ds, &cfg).unwrap();
        let hb = joint_train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.agent.params, b.agent.params);
    }

    #[test]
    fn eval_is_deterministic_and_guards_empty() {
        let ds = mini_data();
        let model = mini_model(4);
        let cfg = mini_cfg();
        let a = eval_offline(&model, &ds.records, &cfg, 7).unwrap();
        assert_eq!(a, eval_offline(&model, &ds.records, &cfg, 7).unwrap());
        assert!(matches!(eval_offline(&model, &[], &cfg, 7), Err(Error::Usage(_))));
    }

    #[test]
    fn joint_loss_gradient_matches_differences() {
        let ds = mini_data();
        let model = mini_model(5);
        let cfg = mini_cfg();
        let record = &ds.records[1];
        let label = truncate_label(&record.label, cfg.l_p, cfg.l_w).unwrap();
        let draws = ExampleDraws {
            budget: Some(4),
            ..example_draws(&cfg, 6, 0, 1)
        };
        let enc = grad_check(&model.encoder.params, 1e-5, Some((60, 1)), |t, pe| {
            let pa = t.bind_copy(&model.agent.params);
            Ok(example_loss(t, pe, &pa, &model, record, &label, &draws, &cfg)?.total)
        })
        .unwrap();
        let agent = grad_check(&model.agent.params, 1e-5, Some((60, 2)), |t, pa| {
            let pe = t.bind_copy(&model.encoder.params);
            Ok(example_loss(t, &pe, pa, &model, record, &label, &draws, &cfg)?.total)
        })
        .unwrap();
        assert!(enc.fraction_within(1e-4) >= 0.9, "{}", enc.max_rel_error);
        assert!(agent.fraction_within(1e-4) >= 0.9, "{}", agent.max_rel_error);
    }

    #[test]
    fn checkpoint_round_trip_is_stable() {
        let model = mini_model(6);
        let mut a = Vec::new();
        write_checkpoint(&model, &mut a).unwrap();
        let back = read_checkpoint(&a[..]).unwrap();
        let mut b = Vec::new();
        write_checkpoint(&back, &mut b).unwrap();
        assert_eq!(a, b);
        let w0 = model.agent.params.tensors().next().unwrap().values[0];
        let w1 = back.agent.params.tensors().next().unwrap().values[0];
        assert_eq!(w1, w0 as f32 as f64);
        assert!(read_checkpoint(&a[..a.len() - 1]).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let ds = mini_data();
        let mut model = mini_model(7);
        let cfg = TrainConfig { l_p: 5, ..mini_cfg() };
        assert!(matches!(joint_train(&mut model, &ds, &cfg), Err(Error::Usage(_))));
    }
}
