//! Central finite-difference check of reverse-mode gradients.

use super::{Bound, ParamStore, RngStream, Tape, Var};
use crate::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// One entry per checked scalar: `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rel_errors.is_empty() {
            return 1.0;
        }
        self.rel_errors.iter().filter(|&&e| e <= tol).count() as f64 / self.rel_errors.len() as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `loss_fn` with central differences of step
/// `step`. With `sample = Some((k, seed))` only `k` seeded-random scalars are
/// checked, otherwise every scalar in `params`.
///
/// `loss_fn` must be deterministic: it is re-evaluated twice per checked scalar.
pub fn grad_check<F>(params: &ParamStore, step: f64, sample: Option<(usize, u64)>, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<'_>, &Bound) -> Result<Var>,
{
    let analytic = {
        let tape = Tape::new();
        let bound = tape.bind(params);
        let loss = loss_fn(&tape, &bound)?;
        let grads = tape.backward(loss)?;
        let mut out = params.grad_buffers();
        grads.accumulate_into(&bound, &mut out);
        out
    };

    let mut coords: Vec<(usize, usize)> = params
        .tensors()
        .enumerate()
        .flat_map(|(t, tensor)| (0..tensor.len()).map(move |i| (t, i)))
        .collect();
    if let Some((k, seed)) = sample {
        let mut rng = RngStream::new(seed, 0x6763);
        rng.shuffle(&mut coords);
        coords.truncate(k);
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = tape.bind(store);
        let loss = loss_fn(&tape, &bound)?;
        Ok(tape.scalar(loss))
    };

    let mut work = params.clone();
    let mut rel_errors = Vec::with_capacity(coords.len());
    for (t, i) in coords {
        let original = params.tensors().nth(t).expect("index in range").values[i];
        let set = |store: &mut ParamStore, v: f64| {
            store.tensors_mut().nth(t).expect("index in range").values[i] = v;
        };
        set(&mut work, original + step);
        let up = eval(&work)?;
        set(&mut work, original - step);
        let down = eval(&work)?;
        set(&mut work, original);
        let numeric = (up - down) / (2.0 * step);
        rel_errors.push(relative_error(analytic[t][i], numeric));
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        rel_errors,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(3, 0);
        let w = store.add_glorot("w", 4, 3, &mut rng);
        let report = grad_check(&store, 1e-4, None, |t, b| {
            let sq = t.square(b[w]);
            let s = t.scale(sq, 0.7);
            Ok(t.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add_filled("w", &[3], 0.5);
        let report = grad_check(&store, 1e-4, None, |t, b| {
            let zero = t.scale(b[w], 0.0);
            let s = t.sum(zero);
            Ok(t.add_scalar(s, 2.0))
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}
