//! Task-oriented JSCC encoder, power normalisation and energy-based symbol
//! selection.
//!
//! The encoder maps an observation raster to `l_z` complex symbols. A mean
//! head and a positive scale head parameterise a Gaussian; in stochastic mode
//! the transmitted symbols are the reparameterised sample `μ + σ ⊙ ε`. The
//! frame is then rescaled so that its average power equals `p_target`
//! exactly, and `σ` is rescaled by the same factor.
//!
//! Complex symbols are carried on the tape as interleaved `(re, im)` pairs.

use crate::env::Observation;
use crate::nn::Linear;
use crate::numerics::{Bound, ComplexVec, ParamStore, RngStream, Tape, Var};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_len: usize,
    pub hidden: usize,
    pub l_z: usize,
    pub p_target: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_len: Observation::LEN,
            hidden: 64,
            l_z: 48,
            p_target: 1.0,
        }
    }
}

impl EncoderConfig {
    /// `l_z / l_x`: channel symbols per source dimension.
    pub fn compression_ratio(&self) -> f64 {
        self.l_z as f64 / self.input_len as f64
    }
}

/// Encoder architecture plus its weights.
#[derive(Debug, Clone)]
pub struct JsccEncoder {
    pub config: EncoderConfig,
    trunk: Linear,
    mean_head: Linear,
    sigma_head: Linear,
    pub params: ParamStore,
}

/// Tape handles produced by one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    /// Power-normalised transmitted symbols, `1 × 2·l_z`.
    pub z: Var,
    /// Power-normalised mean, `1 × 2·l_z`.
    pub mean: Var,
    /// Rescaled per-symbol standard deviation, `1 × l_z`.
    pub sigma: Var,
}

/// One encoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: ComplexVec,
    pub sigma: Vec<f64>,
    pub timestamp: u64,
    /// Indices kept for transmission, ascending.
    pub selected: Option<Vec<usize>>,
}

impl JsccEncoder {
    pub fn new(config: EncoderConfig, rng: &mut RngStream) -> Self {
        let mut params = ParamStore::new();
        let trunk = Linear::new(&mut params, "enc.trunk", config.input_len, config.hidden, rng);
        let mean_head = Linear::new(&mut params, "enc.mean", config.hidden, 2 * config.l_z, rng);
        let sigma_head = Linear::new(&mut params, "enc.sigma", config.hidden, config.l_z, rng);
        JsccEncoder {
            config,
            trunk,
            mean_head,
            sigma_head,
            params,
        }
    }

    /// Rebuilds the architecture around loaded weights.
    pub fn with_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(config, &mut RngStream::new(0, 0));
        if fresh.params.names() != params.names()
            || fresh.params.tensors().zip(params.tensors()).any(|(a, b)| a.shape != b.shape)
        {
            return Err(Error::Format("encoder weights do not match the configured architecture".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }

    /// Encoder pass on the tape. `eps` (length `2·l_z`) selects the
    /// stochastic branch; `None` transmits the mean.
    pub fn forward(&self, t: &Tape<'_>, p: &Bound, x: Var, eps: Option<&[f64]>) -> Result<EncodedVars> {
        let l_z = self.config.l_z;
        let h = self.trunk.forward(t, p, x)?;
        let h = t.tanh(h);
        let mean = self.mean_head.forward(t, p, h)?;
        let s = self.sigma_head.forward(t, p, h)?;
        let sigma = t.softplus(s);

        let raw = match eps {
            Some(eps) => {
                if eps.len() != 2 * l_z {
                    return Err(Error::Shape(format!("eps has {} entries, need {}", eps.len(), 2 * l_z)));
                }
                // repeat each σ_k for the (re, im) pair
                let mut expand = vec![0.0; l_z * 2 * l_z];
                for k in 0..l_z {
                    expand[k * 2 * l_z + 2 * k] = 1.0;
                    expand[k * 2 * l_z + 2 * k + 1] = 1.0;
                }
                let expand = t.constant(l_z, 2 * l_z, expand)?;
                let sigma2 = t.matmul(sigma, expand)?;
                let e = t.row(eps.to_vec());
                let noise = t.mul(sigma2, e)?;
                t.add(mean, noise)?
            }
            None => mean,
        };

        // scale so that (1/l_z)·Σ|z_i|² = p_target
        let energy = t.sum(t.square(raw));
        let inv = t.recip(energy);
        let scale = t.sqrt(t.scale(inv, l_z as f64 * self.config.p_target));
        Ok(EncodedVars {
            z: t.mul_scalar_var(raw, scale)?,
            mean: t.mul_scalar_var(mean, scale)?,
            sigma: t.mul_scalar_var(sigma, scale)?,
        })
    }

    /// Encodes one observation outside of training.
    pub fn encode(&self, x: &Observation, rng: &mut RngStream, stochastic: bool, timestamp: u64) -> Result<SymbolFrame> {
        if x.raster.len() != self.config.input_len {
            return Err(Error::Shape(format!(
                "observation has {} values, encoder expects {}",
                x.raster.len(),
                self.config.input_len
            )));
        }
        let eps: Option<Vec<f64>> = stochastic.then(|| (0..2 * self.config.l_z).map(|_| rng.normal()).collect());
        let t = Tape::new();
        let p = t.bind(&self.params);
        let input = t.row(x.raster.clone());
        let out = self.forward(&t, &p, input, eps.as_deref())?;
        let z = t.value(out.z);
        let sigma = t.value(out.sigma);
        if z.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("encoder produced non-finite symbols".into()));
        }
        Ok(SymbolFrame {
            symbols: ComplexVec::from_interleaved(&z),
            sigma,
            timestamp,
            selected: None,
        })
    }
}

/// Indices of the `l` largest `|z_i|²`, ties broken by lower index; returned
/// ascending.
pub fn top_energy_indices(symbols: &[Complex64], l: usize) -> Result<Vec<usize>> {
    check_budget(l, symbols.len())?;
    let mut order: Vec<usize> = (0..symbols.len()).collect();
    order.sort_by(|&a, &b| {
        symbols[b]
            .norm_sqr()
            .total_cmp(&symbols[a].norm_sqr())
            .then(a.cmp(&b))
    });
    order.truncate(l);
    order.sort_unstable();
    Ok(order)
}

/// `l` indices drawn uniformly without replacement; returned ascending.
pub fn random_indices(rng: &mut RngStream, l_z: usize, l: usize) -> Result<Vec<usize>> {
    check_budget(l, l_z)?;
    let mut all: Vec<usize> = (0..l_z).collect();
    rng.shuffle(&mut all);
    all.truncate(l);
    all.sort_unstable();
    Ok(all)
}

fn check_budget(l: usize, l_z: usize) -> Result<()> {
    if l == 0 || l > l_z {
        return Err(Error::Usage(format!("symbol budget {l} outside 1..={l_z}")));
    }
    Ok(())
}

/// Keeps the `l` highest-energy symbols and zeroes the rest.
pub fn select_symbols(frame: &SymbolFrame, l: usize) -> Result<SymbolFrame> {
    let d = top_energy_indices(&frame.symbols, l)?;
    Ok(apply_selection(frame, d))
}

/// Applies an explicit index set (e.g. a random control selection).
pub fn apply_selection(frame: &SymbolFrame, d: Vec<usize>) -> SymbolFrame {
    let mut symbols = ComplexVec::zeros(frame.symbols.len());
    for &i in &d {
        symbols[i] = frame.symbols[i];
    }
    SymbolFrame {
        symbols,
        sigma: frame.sigma.clone(),
        timestamp: frame.timestamp,
        selected: Some(d),
    }
}

impl SymbolFrame {
    /// The symbols actually put on the air: the selected ones in index
    /// order, or all of them when no selection was made.
    pub fn payload(&self) -> Vec<Complex64> {
        match &self.selected {
            Some(d) => d.iter().map(|&i| self.symbols[i]).collect(),
            None => self.symbols.to_vec(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        match &self.selected {
            Some(d) => d.clone(),
            None => (0..self.symbols.len()).collect(),
        }
    }
}

/// Places `received[j]` at position `d[j]` of a zero vector of length `l_z`.
pub fn scatter_fill(received: &[Complex64], d: &[usize], l_z: usize) -> Result<ComplexVec> {
    if received.len() != d.len() {
        return Err(Error::Usage(format!(
            "{} received symbols for {} indices",
            received.len(),
            d.len()
        )));
    }
    let mut out = ComplexVec::zeros(l_z);
    let mut seen = vec![false; l_z];
    for (&i, &v) in d.iter().zip(received) {
        if i >= l_z {
            return Err(Error::Shape(format!("index {i} outside frame of {l_z}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Shape(format!("duplicate index {i}")));
        }
        out[i] = v;
    }
    Ok(out)
}

/// Interleaved `(re, im)` mask with ones at the selected symbols.
pub fn selection_mask(d: &[usize], l_z: usize) -> Vec<f64> {
    let mut m = vec![0.0; 2 * l_z];
    for &i in d {
        m[2 * i] = 1.0;
        m[2 * i + 1] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_from_energies(e: &[f64]) -> SymbolFrame {
        SymbolFrame {
            symbols: ComplexVec::new(e.iter().map(|&x| Complex64::new(x.sqrt(), 0.0)).collect()),
            sigma: vec![1.0; e.len()],
            timestamp: 0,
            selected: None,
        }
    }

    #[test]
    fn top_two_of_four() {
        let f = frame_from_energies(&[4.0, 1.0, 9.0, 0.0]);
        let s = select_symbols(&f, 2).unwrap();
        assert_eq!(s.selected, Some(vec![0, 2]));
        assert_eq!(s.symbols[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn full_budget_is_identity() {
        let f = frame_from_energies(&[4.0, 1.0, 9.0, 0.5]);
        let s = select_symbols(&f, 4).unwrap();
        assert_eq!(s.symbols, f.symbols);
        assert_eq!(s.payload(), f.symbols.to_vec());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let f = frame_from_energies(&[1.0, 1.0, 1.0]);
        assert_eq!(select_symbols(&f, 2).unwrap().selected, Some(vec![0, 1]));
    }

    #[test]
    fn budget_out_of_range() {
        let f = frame_from_energies(&[1.0, 2.0]);
        assert!(matches!(select_symbols(&f, 0), Err(Error::Usage(_))));
        assert!(matches!(select_symbols(&f, 3), Err(Error::Usage(_))));
    }

    #[test]
    fn scatter_rejects_duplicates() {
        let v = [Complex64::new(1.0, 0.0); 2];
        assert!(matches!(scatter_fill(&v, &[1, 1], 4), Err(Error::Shape(_))));
    }

    #[test]
    fn scatter_full_range_is_identity() {
        let v: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let d: Vec<usize> = (0..5).collect();
        assert_eq!(scatter_fill(&v, &d, 5).unwrap().to_vec(), v);
    }

    #[test]
    fn select_then_scatter_zeroes_weakest() {
        let mut rng = RngStream::new(4, 0);
        let z = crate::numerics::sample_complex_gaussian(&mut rng, 12, 1.0).unwrap();
        let f = SymbolFrame {
            symbols: z.clone(),
            sigma: vec![0.0; 12],
            timestamp: 3,
            selected: None,
        };
        let s = select_symbols(&f, 7).unwrap();
        let back = scatter_fill(&s.payload(), s.selected.as_ref().unwrap(), 12).unwrap();
        // brute force: zero the 5 smallest-energy entries of z
        let mut expect = z.to_vec();
        let mut by_energy: Vec<usize> = (0..12).collect();
        by_energy.sort_by(|&a, &b| z[a].norm_sqr().partial_cmp(&z[b].norm_sqr()).unwrap());
        for &i in &by_energy[..5] {
            expect[i] = Complex64::new(0.0, 0.0);
        }
        assert_eq!(back.to_vec(), expect);
    }

    #[test]
    fn power_constraint_met_with_equality() {
        let mut rng = RngStream::new(2, 0);
        let enc = JsccEncoder::new(EncoderConfig::default(), &mut rng);
        let obs = Observation {
            raster: (0..Observation::LEN).map(|i| ((i * 7) % 11) as f64 / 10.0).collect(),
        };
        for stochastic in [false, true] {
            let f = enc.encode(&obs, &mut rng, stochastic, 0).unwrap();
            assert!((f.symbols.mean_power() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_without_sampling() {
        let mut rng = RngStream::new(2, 0);
        let enc = JsccEncoder::new(EncoderConfig::default(), &mut rng);
        let obs = Observation {
            raster: vec![0.25; Observation::LEN],
        };
        let a = enc.encode(&obs, &mut RngStream::new(1, 0), false, 0).unwrap();
        let b = enc.encode(&obs, &mut RngStream::new(99, 0), false, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compression_ratios() {
        let desk = EncoderConfig::default();
        assert_eq!(desk.compression_ratio(), 0.015625);
        let full = EncoderConfig {
            input_len: 256 * 900 * 3,
            l_z: 1024,
            ..desk
        };
        assert!((full.compression_ratio() - 0.0015).abs() < 5e-5);
    }

    proptest! {
        #[test]
        fn selection_is_permutation_equivariant(
            energies in prop::collection::vec(0.0f64..10.0, 2..20),
            seed in 0u64..1000,
        ) {
            let n = energies.len();
            let l = 1 + (seed as usize % n);
            let f = frame_from_energies(&energies);
            let d = select_symbols(&f, l).unwrap().selected.unwrap();
            // min selected energy ≥ max unselected energy
            let min_in = d.iter().map(|&i| energies[i]).fold(f64::INFINITY, f64::min);
            let max_out = (0..n).filter(|i| !d.contains(i)).map(|i| energies[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_in >= max_out);

            // permuting positions permutes D_t (exact ties aside)
            let mut perm: Vec<usize> = (0..n).collect();
            RngStream::new(seed, 1).shuffle(&mut perm);
            let permuted: Vec<f64> = perm.iter().map(|&i| energies[i]).collect();
            let mut sorted = energies.clone();
            sorted.sort_by(f64::total_cmp);
            let has_ties = sorted.windows(2).any(|w| w[0] == w[1]);
            if !has_ties {
                let dp = select_symbols(&frame_from_energies(&permuted), l).unwrap().selected.unwrap();
                let mut mapped: Vec<usize> = dp.iter().map(|&j| perm[j]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(mapped, d);
            }
        }
    }
}
