//! Experiment configuration, sweep runners and the self-check suite behind
//! the `verify` command.

mod config;
mod sweep;

pub use config::*;
pub use sweep::*;

use crate::channel::{freq_domain_channel, ofdm_transmit, sample_taps, ChannelParams};
use crate::env::{collect_dataset, Dataset};
use crate::numerics::{derive_seed, sample_complex_gaussian, RngStream};
use crate::train::{joint_train, History, Model, TrainConfig};
use crate::vib::{verify_appendix_b_bound, BoundPrior, ToyModel};
use crate::Result;

/// Seed of the expert dataset.
pub fn dataset_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.master_seed, &[0xDA7A])
}

/// Training settings with the seed replaced by one derived from `master_seed`.
pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.master_seed, &[0x7EA1]),
        ..cfg.train.clone()
    }
}

/// Initialises a model from `master_seed` and trains it on `dataset`.
pub fn train_model(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(Model, History)> {
    let mut model = Model::new(cfg.encoder, cfg.agent, derive_seed(cfg.master_seed, &[0x1417]))?;
    let history = joint_train(&mut model, dataset, &train_config(cfg))?;
    Ok((model, history))
}

/// Collects the dataset and trains, all in memory.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    let dataset = collect_dataset(&cfg.env, &cfg.data, dataset_seed(cfg))?;
    train_model(cfg, &dataset)
}

/// Two-sided agreement window for the equality case. Across 50 models a
/// 3σ window would raise a false alarm about one run in eight.
pub const EQUALITY_SE: f64 = 4.0;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest relative deviation between the time-domain OFDM chain and the
/// per-subcarrier model over `trials` noiseless realizations.
pub fn channel_equivalence(seed: u64, trials: usize) -> Result<f64> {
    let params = ChannelParams {
        cp_len: 7,
        noise_var: 0.0,
        ..ChannelParams::default()
    };
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = RngStream::new(derive_seed(seed, &[0xC0, trial as u64]), 0);
        let l_z = 1 + trial % 40;
        let z = sample_complex_gaussian(&mut rng, l_z, 1.0)?;
        let real = sample_taps(&params, &mut rng)?;
        let (td, _) = ofdm_transmit(&z, &real, &params, &mut rng.fork(1))?;
        let (fd, _) = freq_domain_channel(&z, &real, &params, &mut rng.fork(2))?;
        let scale = fd.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        for (a, b) in td.iter().zip(fd.iter()) {
            worst = worst.max((a - b).norm() / scale);
        }
    }
    Ok(worst)
}

/// Variational information bound on `models` toy models: returns how many satisfy
/// `I ≤ E[KL] + 3·SE`, and how many equality cases agree within
/// [`EQUALITY_SE`] standard errors.
pub fn bound_suite(seed: u64, models: usize, n: usize) -> Result<(usize, usize)> {
    let mut holds = 0;
    let mut equal = 0;
    for m in 0..models {
        let mut rng = RngStream::new(derive_seed(seed, &[0xB0, m as u64]), 0);
        let model = ToyModel::random(&mut rng, 2 + m % 4, 1 + m % 3);
        let c = verify_appendix_b_bound(&model, BoundPrior::StandardNormal, &mut rng.fork(1), n)?;
        holds += c.holds() as usize;
        let e = verify_appendix_b_bound(&model, BoundPrior::TrueMarginal, &mut rng.fork(2), n)?;
        equal += ((e.mi_estimate - e.bound).abs() <= EQUALITY_SE * e.se()) as usize;
    }
    Ok((holds, equal))
}

/// Runs the channel-equivalence and bound checks.
pub fn verify(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let worst = channel_equivalence(seed, 100)?;
    out.push(CheckResult {
        name: "channel-equivalence".into(),
        passed: worst <= 1e-9,
        detail: format!("max relative deviation {worst:.3e} over 100 trials"),
    });
    let models = 50;
    let (holds, equal) = bound_suite(seed, models, 20_000)?;
    out.push(CheckResult {
        name: "mi-bound".into(),
        passed: holds == models,
        detail: format!("{holds}/{models} models satisfy I <= E[KL] + 3 SE"),
    });
    out.push(CheckResult {
        name: "mi-bound-equality".into(),
        passed: equal == models,
        detail: format!("{equal}/{models} true-marginal cases agree within {EQUALITY_SE} SE"),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_is_tight() {
        assert!(channel_equivalence(3, 10).unwrap() < 1e-12);
    }

    #[test]
    fn short_prefix_breaks_equivalence() {
        let params = ChannelParams {
            cp_len: 1,
            noise_var: 0.0,
            ..ChannelParams::default()
        };
        let mut rng = RngStream::new(5, 0);
        let z = sample_complex_gaussian(&mut rng, 24, 1.0).unwrap();
        let real = sample_taps(&params, &mut rng).unwrap();
        let (td, _) = ofdm_transmit(&z, &real, &params, &mut rng.fork(1)).unwrap();
        let (fd, _) = freq_domain_channel(&z, &real, &params, &mut rng.fork(2)).unwrap();
        let dev = td.iter().zip(fd.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(dev > 1e-3);
    }

    #[test]
    fn small_bound_suite_passes() {
        assert_eq!(bound_suite(1, 5, 4000).unwrap(), (5, 5));
    }
}
