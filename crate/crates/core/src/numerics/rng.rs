//! Seeded, splittable random streams.
//!
//! A stream is a ChaCha8 generator keyed by a master seed with a separate
//! 64-bit stream id, so `(seed, id)` pairs never overlap.

use super::ComplexVec;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream { rng, stream_id }
    }

    /// A stream keyed by a hash of `parts`, e.g. `(seed, grid_point, repetition)`.
    pub fn derived(master_seed: u64, parts: &[u64]) -> Self {
        Self::new(derive_seed(master_seed, parts), 0)
    }

    /// Splits off an independent child stream.
    pub fn fork(&mut self, tag: u64) -> Self {
        let seed = self.rng.next_u64();
        Self::new(derive_seed(seed, &[tag]), self.stream_id)
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a tuple of integers into a new 64-bit seed.
pub fn derive_seed(master_seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master_seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// `n` i.i.d. CN(0, variance) samples: real and imaginary parts are each
/// N(0, variance/2).
pub fn sample_complex_gaussian(rng: &mut RngStream, n: usize, variance: f64) -> Result<ComplexVec> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Parameter(format!("variance must be >= 0, got {variance}")));
    }
    if n == 0 {
        return Err(Error::Usage("cannot sample an empty complex vector".into()));
    }
    let sd = (variance / 2.0).sqrt();
    Ok(ComplexVec::new(
        (0..n)
            .map(|_| {
                let re = rng.normal();
                let im = rng.normal();
                Complex64::new(sd * re, sd * im)
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_share_no_prefix() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert!(xa.iter().zip(&xb).all(|(p, q)| p != q));
    }

    #[test]
    fn zero_variance_gives_zeros() {
        let mut r = RngStream::new(1, 0);
        let v = sample_complex_gaussian(&mut r, 5, 0.0).unwrap();
        assert_eq!(v.energy(), 0.0);
    }

    #[test]
    fn negative_variance_rejected() {
        let mut r = RngStream::new(1, 0);
        assert!(matches!(
            sample_complex_gaussian(&mut r, 5, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn derived_seeds_differ_by_part() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
    }

    #[test]
    fn below_in_range() {
        let mut r = RngStream::new(9, 0);
        for n in 1..20 {
            for _ in 0..50 {
                assert!(r.below(n) < n);
            }
        }
    }
}
