//! Unitary discrete Fourier transform.
//!
//! Both directions are scaled by `1/√N`, so `idft(dft(v)) == v` and energy is
//! preserved. Lengths here are OFDM-symbol sized (tens of samples), so the
//! direct O(N²) sum is used.

use super::ComplexVec;
use num_complex::Complex64;
use std::f64::consts::PI;

fn transform(v: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = v.len();
    let scale = 1.0 / (n as f64).sqrt();
    // twiddle[m] = exp(sign·2πi·m/N); index products are reduced mod N so the
    // angle stays small and the table is exact for every (k, j) pair.
    let twiddle: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, sign * 2.0 * PI * m as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| {
            let acc: Complex64 = v
                .iter()
                .enumerate()
                .map(|(j, &x)| x * twiddle[(k * j) % n])
                .sum();
            acc * scale
        })
        .collect()
}

/// Forward DFT: `X[k] = (1/√N) Σ_j x[j]·e^{−2πi·jk/N}`.
pub fn dft(v: &ComplexVec) -> ComplexVec {
    ComplexVec::new(transform(v, -1.0))
}

/// Inverse DFT under the same unitary convention.
pub fn idft(v: &ComplexVec) -> ComplexVec {
    ComplexVec::new(transform(v, 1.0))
}

/// Un-normalized forward DFT of `v` zero-padded (or read) to length `n`.
/// Used for channel frequency responses, where `H[k] = Σ_i h_i e^{−2πi·ik/N}`.
pub fn dft_unnormalized(v: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            v.iter()
                .enumerate()
                .map(|(i, &h)| {
                    h * Complex64::from_polar(1.0, -2.0 * PI * ((i * k) % n) as f64 / n as f64)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn impulse_transforms_to_constant() {
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        for x in dft(&v).iter() {
            assert!((x - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn idft_of_ones_is_scaled_impulse() {
        let v = ComplexVec::new(vec![c(1.0, 0.0); 4]);
        let out = idft(&v);
        assert!((out[0] - c(2.0, 0.0)).norm() < 1e-15);
        for x in &out[1..] {
            assert!(x.norm() < 1e-15);
        }
    }

    #[test]
    fn length_one_is_identity() {
        let v = ComplexVec::new(vec![c(0.3, -1.2)]);
        assert_eq!(dft(&v)[0], v[0]);
    }

    #[test]
    fn unnormalized_matches_scaled_unitary() {
        let taps = vec![c(0.5, 0.1), c(-0.2, 0.3), c(0.05, 0.0)];
        let mut padded = taps.clone();
        padded.resize(8, c(0.0, 0.0));
        let unitary = dft(&ComplexVec::new(padded));
        let raw = dft_unnormalized(&taps, 8);
        for (a, b) in unitary.iter().zip(&raw) {
            assert!((a * 8f64.sqrt() - b).norm() < 1e-14);
        }
    }
}
