use crate::channel::ChannelMode;
use crate::dtcp::AgentConfig;
use crate::env::{DataConfig, EnvConfig};
use crate::jscc::EncoderConfig;
use crate::train::{budget_grid, TrainConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Closed-loop evaluation settings shared by all sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluation routes are `route_offset .. route_offset + routes`,
    /// disjoint from the training routes by default.
    pub route_offset: u64,
    pub routes: u64,
    /// Operating point held fixed while another axis is swept.
    pub snr_db: f64,
    pub delay: u64,
    pub variant: u8,
    pub weather_level: f64,
    pub channel_mode: ChannelMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            route_offset: 1000,
            routes: 20,
            snr_db: 20.0,
            delay: 0,
            variant: 1,
            weather_level: 0.0,
            channel_mode: ChannelMode::FrequencyDomain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub snr_db: Vec<f64>,
    /// Symbol budgets; empty means `{l_z/6, 2l_z/6, …, l_z}`.
    pub symbol_budgets: Vec<usize>,
    pub delays: Vec<u64>,
    pub variants: Vec<u8>,
    /// Adds a uniform-random selection arm at `l_z/2` to the symbol sweep.
    pub random_control: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            symbol_budgets: Vec::new(),
            delays: (0..=20).step_by(2).collect(),
            variants: vec![1, 2, 3, 4, 5],
            random_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: PathBuf::from("out/train.elp"),
            checkpoint: PathBuf::from("out/model.ckpt"),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Everything a CLI run depends on. Seeds of the dataset, the model
/// initialisation, training and every episode derive from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub repetitions: usize,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub agent: AgentConfig,
    /// `train.seed` is replaced by a seed derived from `master_seed`.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweeps: SweepGrid,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 2024,
            repetitions: 20,
            env: EnvConfig::default(),
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweeps: SweepGrid::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.master_seed > i64::MAX as u64 {
            return bad("master_seed must fit in a signed 64-bit integer".into());
        }
        let g = &self.sweeps;
        if g.snr_db.is_empty() || g.delays.is_empty() || g.variants.is_empty() {
            return bad("sweep grids must be non-empty".into());
        }
        if let Some(v) = g.variants.iter().chain([&self.eval.variant]).find(|v| !(1..=5).contains(*v)) {
            return bad(format!("variant id {v} outside 1..=5"));
        }
        let l_z = self.encoder.l_z;
        if let Some(l) = g.symbol_budgets.iter().find(|l| **l == 0 || **l > l_z) {
            return bad(format!("symbol budget {l} outside 1..={l_z}"));
        }
        if self.encoder.l_z != self.agent.l_z {
            return bad(format!(
                "encoder.l_z = {} but agent.l_z = {}",
                self.encoder.l_z, self.agent.l_z
            ));
        }
        if self.eval.routes == 0 {
            return bad("eval.routes must be >= 1".into());
        }
        if self.train.l_p > self.data.l_p || self.train.l_w > self.data.l_w {
            return bad("training horizons exceed the dataset horizons".into());
        }
        self.env.validate()?;
        self.data.validate()?;
        self.train.validate()
    }

    pub fn symbol_budgets(&self) -> Vec<usize> {
        if self.sweeps.symbol_budgets.is_empty() {
            budget_grid(self.encoder.l_z)
        } else {
            self.sweeps.symbol_budgets.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML dump.
    pub fn hash(&self) -> Result<String> {
        let text = dump_config(self)?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a TOML config; unknown and duplicate keys are errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn dump_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config("master_seed = 7\n").unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.repetitions, ExperimentConfig::default().repetitions);
        assert_eq!(cfg.sweeps.snr_db, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(cfg.symbol_budgets(), vec![8, 16, 24, 32, 40, 48]);
        let nested = parse_config("[env.vehicle]\ntau = 0.1\n").unwrap();
        assert_eq!(nested.env.vehicle.tau, 0.1);
        assert_eq!(nested.env.vehicle.k_s, EnvConfig::default().vehicle.k_s);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail_closed() {
        assert!(matches!(parse_config("master_sed = 1\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("[train]\nlr_schedule = 1\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("master_seed = 1\nmaster_seed = 2\n"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_config("repetitions = 0\n").is_err());
        assert!(parse_config("[sweeps]\ndelays = []\n").is_err());
        assert!(parse_config("[sweeps]\nvariants = [6]\n").is_err());
        assert!(parse_config("[agent]\nl_z = 12\n").is_err());
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 99;
        cfg.env.heading_noise = 0.0123;
        cfg.sweeps.symbol_budgets = vec![4, 12];
        let text = dump_config(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(cfg.hash().unwrap(), parse_config(&text).unwrap().hash().unwrap());
        assert_ne!(cfg.hash().unwrap(), ExperimentConfig::default().hash().unwrap());
    }
}
