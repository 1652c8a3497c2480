//! Variational information-bottleneck terms.
//!
//! The rate term is the KL divergence of the per-example symbol distribution
//! `N(μ, diag(var))` from the fixed prior `N(0, I)`. The joint objective is the
//! batch mean of `task_loss + β·KL`.

use crate::numerics::{RngStream, Tape, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VibConfig {
    pub beta: f64,
}

impl Default for VibConfig {
    fn default() -> Self {
        VibConfig { beta: 1e-4 }
    }
}

/// `½ Σ (μ² + var − 1 − ln var)`, the KL from `N(μ, var)` to `N(0, 1)`.
pub fn kl_diag_gaussian(mu: &[f64], var: &[f64]) -> Result<f64> {
    if mu.len() != var.len() {
        return Err(Error::Shape(format!("{} means vs {} variances", mu.len(), var.len())));
    }
    let mut acc = 0.0;
    for (&m, &v) in mu.iter().zip(var) {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("variance must be > 0, got {v}")));
        }
        acc += m * m + v - 1.0 - v.ln();
    }
    Ok(0.5 * acc)
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// Sample-mean estimate of the same KL: `E_p[ln p(x) − ln q(x)]` over `n`
/// draws from `p = N(μ, var)`.
pub fn mc_kl_estimate(mu: &[f64], var: &[f64], rng: &mut RngStream, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("mc_kl_estimate needs n >= 1".into()));
    }
    if mu.len() != var.len() {
        return Err(Error::Shape(format!("{} means vs {} variances", mu.len(), var.len())));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("variance must be > 0, got {v}")));
    }
    let mut total = 0.0;
    for _ in 0..n {
        let mut term = 0.0;
        for (&m, &v) in mu.iter().zip(var) {
            let x = m + v.sqrt() * rng.normal();
            term += log_normal_density(x, m, v) - log_normal_density(x, 0.0, 1.0);
        }
        total += term;
    }
    Ok(total / n as f64)
}

/// Per-row KL on the tape: `mu`, `var` are `r × d`, the result `r × 1`.
pub fn kl_diag_gaussian_tape(t: &Tape<'_>, mu: Var, var: Var) -> Result<Var> {
    if t.with_value(var, |v| v.iter().any(|x| !(*x > 0.0))) {
        return Err(Error::Domain("variance must be > 0".into()));
    }
    let m2 = t.square(mu);
    let s = t.add(m2, var)?;
    let lv = t.log(var);
    let s = t.sub(s, lv)?;
    let s = t.add_scalar(s, -1.0);
    let rows = t.sum_cols(s);
    Ok(t.scale(rows, 0.5))
}

/// Batch mean of `task_loss_i + β·KL_i`. Both inputs are `K_b × 1`.
pub fn vib_loss(t: &Tape<'_>, task_loss: Var, kl: Var, cfg: &VibConfig) -> Result<Var> {
    let weighted = t.scale(kl, cfg.beta);
    let per_example = t.add(task_loss, weighted)?;
    Ok(t.mean(per_example))
}

/// A toy generative model with tractable `p(ẑ|x)`: `x` is one of `K` discrete
/// points with probabilities `weights`, and `ẑ | x=k ~ N(means[k], diag(vars[k]))`.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

/// Which approximating marginal `q(ẑ)` the bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundPrior {
    StandardNormal,
    /// The true marginal mixture, where the bound becomes an equality.
    TrueMarginal,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub mi_estimate: f64,
    pub mi_se: f64,
    pub bound: f64,
    pub bound_se: f64,
}

impl BoundCheck {
    /// Combined standard error of `bound − mi_estimate`.
    pub fn se(&self) -> f64 {
        self.mi_se.hypot(self.bound_se)
    }

    /// `I(X;Ẑ) ≤ E_x[KL(p(ẑ|x) ∥ q)]` up to three standard errors.
    pub fn holds(&self) -> bool {
        self.mi_estimate <= self.bound + 3.0 * self.se()
    }
}

impl ToyModel {
    pub fn random(rng: &mut RngStream, components: usize, dim: usize) -> Self {
        let raw: Vec<f64> = (0..components).map(|_| rng.uniform_range(0.2, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        ToyModel {
            weights: raw.iter().map(|w| w / total).collect(),
            means: (0..components)
                .map(|_| (0..dim).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
                .collect(),
            vars: (0..components)
                .map(|_| (0..dim).map(|_| rng.uniform_range(0.2, 1.5)).collect())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_conditional(&self, k: usize, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.means[k])
            .zip(&self.vars[k])
            .map(|((&x, &m), &v)| log_normal_density(x, m, v))
            .sum()
    }

    fn log_marginal(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|k| self.weights[k].ln() + self.log_conditional(k, z))
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }

    fn sample(&self, rng: &mut RngStream) -> (usize, Vec<f64>) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = self.means[k]
            .iter()
            .zip(&self.vars[k])
            .map(|(&m, &v)| m + v.sqrt() * rng.normal())
            .collect();
        (k, z)
    }
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo check of `I(X;Ẑ) ≤ E_x[KL(p(ẑ|x) ∥ q(ẑ))]` on a toy model.
///
/// The mutual information is estimated from `n` joint samples as the mean of
/// `ln p(ẑ|x) − ln p(ẑ)`. For the standard-normal prior the bound is the
/// closed-form expected KL; for the true marginal it is estimated from an
/// independent sample set.
pub fn verify_appendix_b_bound(model: &ToyModel, prior: BoundPrior, rng: &mut RngStream, n: usize) -> Result<BoundCheck> {
    if n == 0 {
        return Err(Error::Usage("need at least one sample".into()));
    }
    let mut mi_rng = rng.fork(1);
    let mi_terms: Vec<f64> = (0..n)
        .map(|_| {
            let (k, z) = model.sample(&mut mi_rng);
            model.log_conditional(k, &z) - model.log_marginal(&z)
        })
        .collect();
    let (mi_estimate, mi_se) = mean_and_se(&mi_terms);

    let (bound, bound_se) = match prior {
        BoundPrior::StandardNormal => {
            let mut expected = 0.0;
            for (k, w) in model.weights.iter().enumerate() {
                expected += w * kl_diag_gaussian(&model.means[k], &model.vars[k])?;
            }
            (expected, 0.0)
        }
        BoundPrior::TrueMarginal => {
            let mut b_rng = rng.fork(2);
            let terms: Vec<f64> = (0..n)
                .map(|_| {
                    let (k, z) = model.sample(&mut b_rng);
                    model.log_conditional(k, &z) - model.log_marginal(&z)
                })
                .collect();
            mean_and_se(&terms)
        }
    };
    Ok(BoundCheck {
        mi_estimate,
        mi_se,
        bound,
        bound_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamStore};
    use proptest::prelude::*;

    #[test]
    fn kl_of_prior_is_zero() {
        assert_eq!(kl_diag_gaussian(&[0.0; 4], &[1.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_shift() {
        assert!((kl_diag_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_nonpositive_variance() {
        assert!(matches!(kl_diag_gaussian(&[0.0], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn mc_estimate_of_prior_vanishes() {
        let mut rng = RngStream::new(1, 0);
        let est = mc_kl_estimate(&[0.0; 3], &[1.0; 3], &mut rng, 1000).unwrap();
        assert!(est.abs() < 1e-12);
    }

    #[test]
    fn beta_zero_is_pure_task_loss() {
        let t = Tape::new();
        let task = t.constant(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let kl = t.constant(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        let l = vib_loss(&t, task, kl, &VibConfig { beta: 0.0 }).unwrap();
        assert_eq!(t.scalar(l), 2.0);
    }

    #[test]
    fn zero_task_constant_kl() {
        let t = Tape::new();
        let task = t.constant(2, 1, vec![0.0, 0.0]).unwrap();
        let kl = t.constant(2, 1, vec![5.0, 5.0]).unwrap();
        let l = vib_loss(&t, task, kl, &VibConfig { beta: 0.01 }).unwrap();
        assert!((t.scalar(l) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn tape_kl_matches_closed_form_and_gradient() {
        let mut store = ParamStore::new();
        let mu = store.add("mu", &[2, 3], vec![0.3, -1.0, 0.2, 0.0, 0.5, 1.5]).unwrap();
        let pre = store.add("pre", &[2, 3], vec![0.1, -0.4, 1.0, 0.2, -2.0, 0.3]).unwrap();
        {
            let t = Tape::new();
            let p = t.bind(&store);
            let var = t.softplus(p[pre]);
            let kl = kl_diag_gaussian_tape(&t, p[mu], var).unwrap();
            let got = t.value(kl);
            let varv = t.value(var);
            let muv = &store.get(mu).values;
            for r in 0..2 {
                let want = kl_diag_gaussian(&muv[r * 3..r * 3 + 3], &varv[r * 3..r * 3 + 3]).unwrap();
                assert!((got[r] - want).abs() < 1e-14);
            }
        }
        let report = grad_check(&store, 1e-5, None, |t, p| {
            let var = t.softplus(p[pre]);
            let kl = kl_diag_gaussian_tape(t, p[mu], var)?;
            let task = t.constant(2, 1, vec![0.7, 0.1])?;
            vib_loss(t, task, kl, &VibConfig { beta: 0.3 })
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn degenerate_source_has_zero_information() {
        let model = ToyModel {
            weights: vec![1.0],
            means: vec![vec![0.5, -0.5]],
            vars: vec![vec![0.7, 1.2]],
        };
        let check = verify_appendix_b_bound(&model, BoundPrior::StandardNormal, &mut RngStream::new(3, 0), 2000).unwrap();
        assert!(check.mi_estimate.abs() < 1e-12);
        assert!(check.holds());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kl_is_nonnegative(
            pairs in prop::collection::vec((-3.0f64..3.0, 0.05f64..5.0), 1..10)
        ) {
            let (mu, var): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(kl_diag_gaussian(&mu, &var).unwrap() >= 0.0);
        }
    }
}
