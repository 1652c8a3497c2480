use num_complex::Complex64;
use std::ops::{Deref, DerefMut};

/// A non-empty vector of complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec(Vec<Complex64>);

impl ComplexVec {
    /// Wraps `values`. Callers that may pass an empty vector should use
    /// [`ComplexVec::try_new`].
    pub fn new(values: Vec<Complex64>) -> Self {
        assert!(!values.is_empty(), "ComplexVec must have at least one element");
        ComplexVec(values)
    }

    pub fn try_new(values: Vec<Complex64>) -> crate::Result<Self> {
        if values.is_empty() {
            return Err(crate::Error::Usage("empty complex vector".into()));
        }
        Ok(ComplexVec(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); n])
    }

    /// Builds from interleaved `(re, im)` pairs.
    pub fn from_interleaved(values: &[f64]) -> Self {
        assert!(values.len() % 2 == 0);
        Self::new(
            values
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        )
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.0.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    /// Σ |v_i|².
    pub fn energy(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

impl Deref for ComplexVec {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl DerefMut for ComplexVec {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.0
    }
}

impl From<Vec<Complex64>> for ComplexVec {
    fn from(v: Vec<Complex64>) -> Self {
        ComplexVec::new(v)
    }
}
