//! Frequency-selective OFDM channel.
//!
//! Two routes are provided. [`ofdm_transmit`] runs the full time-domain chain
//! (padding, per-symbol IDFT, cyclic prefix, multipath convolution, noise, CP
//! removal, DFT). [`freq_domain_channel`] is the per-subcarrier abstraction
//! `ž = h·z + n`, which the time-domain chain reproduces exactly whenever the
//! cyclic prefix covers the channel memory (`cp_len ≥ n_path − 1`).

use crate::numerics::{dft, dft::dft_unnormalized, idft, sample_complex_gaussian, ComplexVec, RngStream};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Below this magnitude a subcarrier is treated as an outage.
pub const DEGENERATE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub n_sub: usize,
    pub n_path: usize,
    pub gamma: f64,
    pub cp_len: usize,
    /// σ_n², the complex noise variance per subcarrier.
    pub noise_var: f64,
    pub p_target: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            n_sub: 12,
            n_path: 8,
            gamma: 4.0,
            cp_len: 3,
            noise_var: 0.01,
            p_target: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_sub == 0 || self.n_path == 0 {
            return bad(format!("n_sub={} and n_path={} must be >= 1", self.n_sub, self.n_path));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if self.cp_len > self.n_sub {
            return bad(format!("cp_len {} exceeds n_sub {}", self.cp_len, self.n_sub));
        }
        if !(self.noise_var >= 0.0) {
            return bad(format!("noise_var must be >= 0, got {}", self.noise_var));
        }
        if !(self.p_target > 0.0) {
            return bad(format!("p_target must be > 0, got {}", self.p_target));
        }
        Ok(())
    }

    /// True when the cyclic prefix covers the channel memory, so the
    /// time-domain chain is exactly multiplicative per subcarrier.
    pub fn cp_covers_memory(&self) -> bool {
        self.cp_len + 1 >= self.n_path
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = snr_to_noise_var(snr_db, self.p_target);
        self
    }
}

/// Which channel route a transmission uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// `ž = h·z + n` per subcarrier.
    #[default]
    FrequencyDomain,
    /// Full OFDM chain with cyclic prefix and multipath convolution.
    TimeDomain,
}

/// One block-fading draw of the multipath taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: ComplexVec,
}

impl ChannelRealization {
    /// Per-symbol response for a frame of `l_z` symbols: the un-normalised
    /// length-`n_sub` DFT of the taps, read at subcarrier `k mod n_sub`.
    pub fn freq_response(&self, l_z: usize, n_sub: usize) -> ComplexVec {
        let per_sub = dft_unnormalized(&self.taps, n_sub);
        ComplexVec::new((0..l_z).map(|k| per_sub[k % n_sub]).collect())
    }
}

/// Normalised exponential power-delay profile `σ_i² ∝ e^{−i/γ}`, Σσ_i² = 1.
pub fn tap_power_profile(params: &ChannelParams) -> Vec<f64> {
    let raw: Vec<f64> = (0..params.n_path)
        .map(|i| (-(i as f64) / params.gamma).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Independent taps `h_i ~ CN(0, σ_i²)`.
pub fn sample_taps(params: &ChannelParams, rng: &mut RngStream) -> Result<ChannelRealization> {
    params.validate()?;
    let taps = tap_power_profile(params)
        .into_iter()
        .map(|p| Ok(sample_complex_gaussian(rng, 1, p)?[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        taps: ComplexVec::new(taps),
    })
}

/// Sends `z` through the time-domain OFDM chain. Returns the received symbols
/// `ž` (padding dropped) and the per-symbol frequency response `h`.
pub fn ofdm_transmit(
    z: &[Complex64],
    realization: &ChannelRealization,
    params: &ChannelParams,
    rng: &mut RngStream,
) -> Result<(ComplexVec, ComplexVec)> {
    params.validate()?;
    if z.is_empty() {
        return Err(Error::Usage("cannot transmit an empty symbol vector".into()));
    }
    let n_sub = params.n_sub;
    let cp = params.cp_len;
    let l_z = z.len();
    let n_sym = l_z.div_ceil(n_sub);

    // transmitter: pad, per-row IDFT, prepend cyclic prefix
    let block = n_sub + cp;
    let mut tx = Vec::with_capacity(n_sym * block);
    for row in 0..n_sym {
        let mut sym = vec![Complex64::new(0.0, 0.0); n_sub];
        for (k, s) in sym.iter_mut().enumerate() {
            if let Some(&v) = z.get(row * n_sub + k) {
                *s = v;
            }
        }
        let time = idft(&ComplexVec::new(sym));
        tx.extend_from_slice(&time[n_sub - cp..]);
        tx.extend_from_slice(&time);
    }

    // multipath: linear convolution, truncated to the transmitted length
    let taps = &realization.taps;
    let mut rx: Vec<Complex64> = (0..tx.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(i, &h)| h * tx[n - i])
                .sum()
        })
        .collect();
    let noise = sample_complex_gaussian(rng, rx.len(), params.noise_var)?;
    for (r, n) in rx.iter_mut().zip(noise.iter()) {
        *r += n;
    }

    // receiver: drop CP, per-row DFT, drop padding
    let mut out = Vec::with_capacity(l_z);
    for row in 0..n_sym {
        let start = row * block + cp;
        let freq = dft(&ComplexVec::new(rx[start..start + n_sub].to_vec()));
        out.extend_from_slice(&freq);
    }
    out.truncate(l_z);
    Ok((ComplexVec::new(out), realization.freq_response(l_z, n_sub)))
}

/// The analytic per-subcarrier model: `ž = h·z + n`, `n ~ CN(0, noise_var)`.
pub fn freq_domain_channel(
    z: &[Complex64],
    realization: &ChannelRealization,
    params: &ChannelParams,
    rng: &mut RngStream,
) -> Result<(ComplexVec, ComplexVec)> {
    params.validate()?;
    if z.is_empty() {
        return Err(Error::Usage("cannot transmit an empty symbol vector".into()));
    }
    let h = realization.freq_response(z.len(), params.n_sub);
    let noise = sample_complex_gaussian(rng, z.len(), params.noise_var)?;
    let out = z
        .iter()
        .zip(h.iter())
        .zip(noise.iter())
        .map(|((&s, &g), &n)| g * s + n)
        .collect();
    Ok((ComplexVec::new(out), h))
}

/// Dispatches on `mode`.
pub fn transmit(
    mode: ChannelMode,
    z: &[Complex64],
    realization: &ChannelRealization,
    params: &ChannelParams,
    rng: &mut RngStream,
) -> Result<(ComplexVec, ComplexVec)> {
    match mode {
        ChannelMode::FrequencyDomain => freq_domain_channel(z, realization, params, rng),
        ChannelMode::TimeDomain => ofdm_transmit(z, realization, params, rng),
    }
}

/// Zero-forcing equalisation `ẑ = (h*/|h|²)·ž` with perfect channel knowledge.
pub fn equalize(received: &[Complex64], h: &[Complex64]) -> Result<ComplexVec> {
    if received.len() != h.len() {
        return Err(Error::Shape(format!(
            "equalize: {} symbols vs {} channel gains",
            received.len(),
            h.len()
        )));
    }
    let out = received
        .iter()
        .zip(h)
        .enumerate()
        .map(|(index, (&y, &g))| {
            let mag2 = g.norm_sqr();
            if g.norm() < DEGENERATE_GAIN {
                return Err(Error::DegenerateChannel {
                    index,
                    magnitude: g.norm(),
                });
            }
            Ok(g.conj() * y / mag2)
        })
        .collect::<Result<Vec<_>>>()?;
    ComplexVec::try_new(out)
}

/// `noise_var = p_target · 10^{−snr_db/10}`.
pub fn snr_to_noise_var(snr_db: f64, p_target: f64) -> f64 {
    p_target * 10f64.powf(-snr_db / 10.0)
}
