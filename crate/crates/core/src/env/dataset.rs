//! Expert dataset collection and the `ELP1` binary format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "ELP1" | version u32 | record_count u64
//! raster_h u32 | raster_w u32 | raster_c u32 | l_p u32 | l_w u32
//! control_dims u32 | traj_feature_dim u32 | ctrl_feature_dim u32
//! record_count × record, each a run of f32:
//!   raster[c·h·w]  speed  nav_command  dest_x  dest_y  timestamp
//!   waypoints[(l_p+l_w)·2]  control_seq[(l_p+1)·control_dims·2]
//!   traj_feature[traj_feature_dim]  ctrl_features[(l_p+1)·ctrl_feature_dim]
//!   target_speed  value
//! ```

use super::episode::{Episode, Scene};
use super::expert::ExpertController;
use super::render::{Weather, RASTER_C, RASTER_H, RASTER_W};
use super::world::Command;
use super::{EnvConfig, ExpertLabel, NavCommand, StateInfo, CONTROL_DIMS, CTRL_FEATURE_DIM, TRAJ_FEATURE_DIM};
use crate::numerics::RngStream;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ELP1";
const VERSION: u32 = 1;
const DATA_TAG: u64 = 0xDA7A;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    /// Episodes cycle through route ids `route_offset..route_offset + routes`.
    pub routes: u64,
    pub route_offset: u64,
    /// Record every `stride`-th slot.
    pub stride: u64,
    pub l_p: usize,
    pub l_w: usize,
    /// Per-slot probability of starting a steering perturbation.
    pub noise_prob: f64,
    pub noise_steer: f64,
    pub noise_duration: u64,
    pub start_lateral: f64,
    pub start_heading: f64,
    /// Upper bound of the per-episode actuation delay of the data-collection
    /// driver, so the data covers states reached under stale commands.
    pub max_command_delay: u64,
    pub weather_levels: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 100,
            routes: 64,
            route_offset: 0,
            stride: 4,
            l_p: 20,
            l_w: 4,
            noise_prob: 0.02,
            noise_steer: 0.3,
            noise_duration: 12,
            start_lateral: 1.0,
            start_heading: 0.1,
            max_command_delay: 20,
            weather_levels: vec![0.0, 0.1, 0.2, 0.3],
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.routes == 0 || self.stride == 0 || self.weather_levels.is_empty() {
            return Err(Error::Parameter("data config needs routes, stride and weather levels".into()));
        }
        if self.weather_levels.iter().any(|w| !(0.0..1.0).contains(w)) {
            return Err(Error::Parameter("weather levels must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub raster: [usize; 3],
    pub l_p: usize,
    pub l_w: usize,
    pub control_dims: usize,
    pub traj_feature_dim: usize,
    pub ctrl_feature_dim: usize,
}

impl DatasetHeader {
    pub fn new(l_p: usize, l_w: usize) -> Self {
        DatasetHeader {
            raster: [RASTER_H, RASTER_W, RASTER_C],
            l_p,
            l_w,
            control_dims: CONTROL_DIMS,
            traj_feature_dim: TRAJ_FEATURE_DIM,
            ctrl_feature_dim: CTRL_FEATURE_DIM,
        }
    }

    pub fn raster_len(&self) -> usize {
        self.raster.iter().product()
    }

    /// f32 values per record.
    pub fn record_len(&self) -> usize {
        self.raster_len()
            + 5
            + 2 * (self.l_p + self.l_w)
            + (self.l_p + 1) * self.control_dims * 2
            + self.traj_feature_dim
            + (self.l_p + 1) * self.ctrl_feature_dim
            + 2
    }
}

/// One training example. Values are stored at f32 precision so a record
/// survives a file round trip unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub raster: Vec<f32>,
    pub state: StateInfo,
    pub label: ExpertLabel,
}

fn r32(x: f64) -> f64 {
    x as f32 as f64
}

impl Record {
    pub fn new(raster: &[f64], state: StateInfo, label: ExpertLabel) -> Self {
        let q = |v: &[f64]| v.iter().map(|x| r32(*x)).collect::<Vec<_>>();
        Record {
            raster: raster.iter().map(|x| *x as f32).collect(),
            state: StateInfo {
                speed: r32(state.speed),
                nav_command: state.nav_command,
                destination: [r32(state.destination[0]), r32(state.destination[1])],
                timestamp: state.timestamp,
            },
            label: ExpertLabel {
                waypoints: label.waypoints.iter().map(|w| [r32(w[0]), r32(w[1])]).collect(),
                control_seq: label.control_seq.iter().map(|c| c.map(r32)).collect(),
                traj_feature: q(&label.traj_feature),
                ctrl_features: label.ctrl_features.iter().map(|f| q(f)).collect(),
                target_speed: r32(label.target_speed),
                value: r32(label.value),
            },
        }
    }

    pub fn raster_f64(&self) -> Vec<f64> {
        self.raster.iter().map(|x| *x as f64).collect()
    }

    fn push_floats(&self, out: &mut Vec<f32>) {
        out.extend_from_slice(&self.raster);
        let s = &self.state;
        out.extend([
            s.speed as f32,
            s.nav_command.index() as f32,
            s.destination[0] as f32,
            s.destination[1] as f32,
            s.timestamp as f32,
        ]);
        let l = &self.label;
        out.extend(l.waypoints.iter().flat_map(|w| [w[0] as f32, w[1] as f32]));
        out.extend(l.control_seq.iter().flat_map(|c| c.map(|v| v as f32)));
        out.extend(l.traj_feature.iter().map(|v| *v as f32));
        out.extend(l.ctrl_features.iter().flatten().map(|v| *v as f32));
        out.extend([l.target_speed as f32, l.value as f32]);
    }

    fn from_floats(h: &DatasetHeader, f: &[f32]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &f[pos..pos + n];
            pos += n;
            s
        };
        let raster = take(h.raster_len()).to_vec();
        let st = take(5);
        let state = StateInfo {
            speed: st[0] as f64,
            nav_command: NavCommand::from_index(st[1] as usize)?,
            destination: [st[2] as f64, st[3] as f64],
            timestamp: st[4] as u64,
        };
        let waypoints = take(2 * (h.l_p + h.l_w))
            .chunks(2)
            .map(|c| [c[0] as f64, c[1] as f64])
            .collect();
        let control_seq = take((h.l_p + 1) * 4)
            .chunks(4)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64])
            .collect();
        let traj_feature = take(h.traj_feature_dim).iter().map(|v| *v as f64).collect();
        let ctrl_features = take((h.l_p + 1) * h.ctrl_feature_dim)
            .chunks(h.ctrl_feature_dim.max(1))
            .map(|c| c.iter().map(|v| *v as f64).collect())
            .collect();
        let tail = take(2);
        Ok(Record {
            raster,
            state,
            label: ExpertLabel {
                waypoints,
                control_seq,
                traj_feature,
                ctrl_features,
                target_speed: tail[0] as f64,
                value: tail[1] as f64,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let h = &self.header;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for v in [
            h.raster[0],
            h.raster[1],
            h.raster[2],
            h.l_p,
            h.l_w,
            h.control_dims,
            h.traj_feature_dim,
            h.ctrl_feature_dim,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(h.record_len());
        let mut bytes = Vec::with_capacity(4 * h.record_len());
        for r in &self.records {
            buf.clear();
            bytes.clear();
            r.push_floats(&mut buf);
            bytes.extend(buf.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&bytes)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("dataset {what}"));
        let mut head = [0u8; 48];
        r.read_exact(&mut head).map_err(|_| bad("header truncated"))?;
        if &head[0..4] != MAGIC {
            return Err(bad("magic mismatch"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes")) as usize;
        if u32_at(4) as u32 != VERSION {
            return Err(bad("version unsupported"));
        }
        let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
        let header = DatasetHeader {
            raster: [u32_at(16), u32_at(20), u32_at(24)],
            l_p: u32_at(28),
            l_w: u32_at(32),
            control_dims: u32_at(36),
            traj_feature_dim: u32_at(40),
            ctrl_feature_dim: u32_at(44),
        };
        if header.control_dims != CONTROL_DIMS {
            return Err(bad("control dimension mismatch"));
        }
        let n = header.record_len();
        let mut bytes = vec![0u8; 4 * n];
        let mut floats = vec![0f32; n];
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut bytes).map_err(|_| bad("records truncated"))?;
            for (f, b) in floats.iter_mut().zip(bytes.chunks_exact(4)) {
                *f = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
            records.push(Record::from_floats(&header, &floats)?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|_| bad("unreadable"))? != 0 {
            return Err(bad("has trailing bytes"));
        }
        Ok(Dataset { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn collect_episode(env: &EnvConfig, data: &DataConfig, seed: u64, index: usize) -> Result<Vec<Record>> {
    let mut rng = RngStream::derived(seed, &[DATA_TAG, index as u64]);
    let route_id = data.route_offset + index as u64 % data.routes;
    let level = data.weather_levels[rng.below(data.weather_levels.len())];
    let weather = Weather::from_level(level, rand::RngCore::next_u64(&mut rng));
    let lateral = rng.uniform_range(-data.start_lateral, data.start_lateral);
    let heading = rng.uniform_range(-data.start_heading, data.start_heading);
    let delay = rng.below(data.max_command_delay as usize + 1);
    let mut ep = Episode::new(env, Scene::new(env, route_id), weather, lateral, heading);
    let mut ctl = ExpertController::default();
    let mut pending: VecDeque<Command> = VecDeque::new();
    let mut held = Command::default();
    let mut noise_left = 0u64;
    let mut noise = 0.0;
    let mut records = Vec::new();
    while !ep.is_done() {
        let slot = ep.world().slot;
        if slot % data.stride == 0 {
            match ep.expert_label(&ctl, data.l_p, data.l_w) {
                Ok(label) => records.push(Record::new(&ep.observe().raster, ep.state_info(), label)),
                Err(Error::EpisodeFinished) => break,
                Err(e) => return Err(e),
            }
        }
        pending.push_back(ep.expert_command(&mut ctl));
        if pending.len() > delay {
            held = pending.pop_front().expect("queue is non-empty");
        }
        if noise_left == 0 && rng.uniform() < data.noise_prob {
            noise_left = data.noise_duration;
            noise = rng.uniform_range(-data.noise_steer, data.noise_steer);
        }
        let mut cmd = held;
        if noise_left > 0 {
            noise_left -= 1;
            cmd = Command::new(cmd.steer + noise, cmd.accel);
        }
        ep.advance(cmd, &mut rng);
    }
    Ok(records)
}

/// Runs the noisy data-collection driver over `data.episodes` episodes
/// (in parallel, merged in episode order) and labels every `stride`-th slot
/// with the expert.
pub fn collect_dataset(env: &EnvConfig, data: &DataConfig, seed: u64) -> Result<Dataset> {
    env.validate()?;
    data.validate()?;
    let per_episode: Vec<Result<Vec<Record>>> = (0..data.episodes)
        .into_par_iter()
        .map(|i| collect_episode(env, data, seed, i))
        .collect();
    let mut records = Vec::new();
    for r in per_episode {
        records.extend(r?);
    }
    Ok(Dataset {
        header: DatasetHeader::new(data.l_p, data.l_w),
        records,
    })
}

/// Collects a dataset and writes it to `path`.
pub fn generate_dataset(env: &EnvConfig, data: &DataConfig, seed: u64, path: &Path) -> Result<Dataset> {
    let ds = collect_dataset(env, data, seed)?;
    ds.save(path)?;
    Ok(ds)
}
