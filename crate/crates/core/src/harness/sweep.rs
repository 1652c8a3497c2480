use super::config::ExperimentConfig;
use crate::env::{score, EpisodeTrace, Weather};
use crate::numerics::{derive_seed, RngStream};
use crate::pipeline::{dtcp_variant, run_episode, DelayProfile, Driver, RunConfig, Selection, VariantConfig};
use crate::train::Model;
use crate::{Error, Result};
use rayon::prelude::*;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Snr,
    Symbols,
    Delay,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr",
            SweepKind::Symbols => "symbols",
            SweepKind::Delay => "delay",
        }
    }

    fn tag(self) -> u64 {
        match self {
            SweepKind::Snr => 0x5A1,
            SweepKind::Symbols => 0x5A2,
            SweepKind::Delay => 0x5A3,
        }
    }
}

/// One operating point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub variant: VariantConfig,
    pub snr_db: f64,
    pub delay: u64,
}

impl GridPoint {
    pub fn arm(&self) -> &'static str {
        match self.variant.selection {
            Selection::Full => "full",
            Selection::TopEnergy(_) => "top-energy",
            Selection::Random(_) => "random",
        }
    }
}

/// One scored episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub point: GridPoint,
    pub budget: usize,
    pub repetition: usize,
    pub route: u64,
    pub seed: u64,
    pub score: f64,
    pub completion: f64,
    pub mean_cte: f64,
    pub collisions: u32,
    pub offtrack: u32,
}

/// Grid points of a sweep, in output order.
pub fn grid(cfg: &ExperimentConfig, kind: SweepKind) -> Result<Vec<GridPoint>> {
    let l_z = cfg.encoder.l_z;
    let base = dtcp_variant(cfg.eval.variant, l_z)?;
    let at = |variant: VariantConfig, snr_db: f64, delay: u64| GridPoint { variant, snr_db, delay };
    let points = match kind {
        SweepKind::Snr => cfg.sweeps.snr_db.iter().map(|&s| at(base, s, cfg.eval.delay)).collect(),
        SweepKind::Symbols => {
            let mut pts: Vec<GridPoint> = cfg
                .symbol_budgets()
                .into_iter()
                .map(|l| {
                    let selection = if l == l_z { Selection::Full } else { Selection::TopEnergy(l) };
                    at(VariantConfig { selection, ..base }, cfg.eval.snr_db, cfg.eval.delay)
                })
                .collect();
            if cfg.sweeps.random_control {
                let v = VariantConfig {
                    selection: Selection::Random(l_z / 2),
                    ..base
                };
                pts.push(at(v, cfg.eval.snr_db, cfg.eval.delay));
            }
            pts
        }
        SweepKind::Delay => {
            let mut pts = Vec::new();
            for &id in &cfg.sweeps.variants {
                for &d in &cfg.sweeps.delays {
                    pts.push(at(dtcp_variant(id, l_z)?, cfg.eval.snr_db, d));
                }
            }
            pts
        }
    };
    Ok(points)
}

/// Closed-loop settings of one episode.
pub fn episode_setup(cfg: &ExperimentConfig, point: &GridPoint, repetition: usize, seed: u64) -> RunConfig {
    let route = cfg.eval.route_offset + repetition as u64 % cfg.eval.routes;
    let mut run = RunConfig::new(
        cfg.env,
        cfg.train.channel.with_snr_db(point.snr_db),
        DelayProfile::from_total(point.delay),
        route,
    );
    run.channel_mode = cfg.eval.channel_mode;
    run.l_w = cfg.train.l_w;
    run.weather = Weather::from_level(cfg.eval.weather_level, seed);
    run
}

/// Seed of an episode: a hash of the master seed, the sweep, the grid
/// point and the repetition.
pub fn episode_seed(cfg: &ExperimentConfig, kind: SweepKind, point: usize, repetition: usize) -> u64 {
    derive_seed(cfg.master_seed, &[kind.tag(), point as u64, repetition as u64])
}

fn row(point: GridPoint, l_z: usize, repetition: usize, seed: u64, trace: &EpisodeTrace) -> EpisodeRow {
    EpisodeRow {
        point,
        budget: point.variant.selection.budget(l_z),
        repetition,
        route: trace.route_id,
        seed,
        score: score(trace),
        completion: trace.completion,
        mean_cte: trace.mean_cte,
        collisions: trace.collisions,
        offtrack: trace.offtrack_events,
    }
}

/// Runs every grid point × repetition, in parallel, returning rows in grid
/// order. `driver = None` uses the learned model.
pub fn run_sweep(cfg: &ExperimentConfig, kind: SweepKind, model: Option<&Model>) -> Result<Vec<EpisodeRow>> {
    cfg.validate()?;
    let points = grid(cfg, kind)?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.repetitions).map(move |r| (p, r)))
        .collect();
    let l_z = cfg.encoder.l_z;
    let rows: Vec<Result<EpisodeRow>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let point = points[p];
            let seed = episode_seed(cfg, kind, p, r);
            let run = episode_setup(cfg, &point, r, seed);
            let driver = match model {
                Some(m) => Driver::Learned {
                    encoder: &m.encoder,
                    agent: &m.agent,
                },
                None => Driver::Expert,
            };
            let trace = run_episode(&run, driver, &point.variant, &mut RngStream::new(seed, 0))?;
            Ok(row(point, l_z, r, seed, &trace))
        })
        .collect();
    rows.into_iter().collect()
}

/// Mean and sample standard deviation of the scores at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub point: GridPoint,
    pub budget: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(rows: &[EpisodeRow]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        match out.iter().position(|a| a.point == r.point) {
            Some(i) => groups[i].push(r.score),
            None => {
                out.push(Aggregate {
                    point: r.point,
                    budget: r.budget,
                    n: 0,
                    mean: 0.0,
                    std: 0.0,
                });
                groups.push(vec![r.score]);
            }
        }
    }
    for (a, g) in out.iter_mut().zip(&groups) {
        let n = g.len() as f64;
        a.n = g.len();
        a.mean = g.iter().sum::<f64>() / n;
        a.std = if g.len() > 1 {
            (g.iter().map(|x| (x - a.mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
    }
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Per-episode CSV. Every row carries the master seed and config hash.
pub fn write_rows<W: Write>(out: W, cfg: &ExperimentConfig, kind: SweepKind, rows: &[EpisodeRow]) -> Result<()> {
    let hash = cfg.hash()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "master_seed",
        "config_hash",
        "sweep",
        "variant",
        "arm",
        "snr_db",
        "budget",
        "delay",
        "repetition",
        "route",
        "seed",
        "score",
        "completion",
        "mean_cte",
        "collisions",
        "offtrack",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            cfg.master_seed.to_string(),
            hash.clone(),
            kind.name().to_string(),
            r.point.variant.id.to_string(),
            r.point.arm().to_string(),
            r.point.snr_db.to_string(),
            r.budget.to_string(),
            r.point.delay.to_string(),
            r.repetition.to_string(),
            r.route.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.score),
            format!("{:.6}", r.completion),
            format!("{:.6}", r.mean_cte),
            r.collisions.to_string(),
            r.offtrack.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Per-grid-point summary CSV.
pub fn write_summary<W: Write>(out: W, cfg: &ExperimentConfig, kind: SweepKind, rows: &[EpisodeRow]) -> Result<()> {
    let hash = cfg.hash()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "master_seed",
        "config_hash",
        "sweep",
        "variant",
        "arm",
        "snr_db",
        "budget",
        "delay",
        "n",
        "mean_score",
        "std_score",
    ])
    .map_err(csv_err)?;
    for a in aggregate(rows) {
        w.write_record([
            cfg.master_seed.to_string(),
            hash.clone(),
            kind.name().to_string(),
            a.point.variant.id.to_string(),
            a.point.arm().to_string(),
            a.point.snr_db.to_string(),
            a.budget.to_string(),
            a.point.delay.to_string(),
            a.n.to_string(),
            format!("{:.6}", a.mean),
            format!("{:.6}", a.std),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
