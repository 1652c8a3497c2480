//! Complex vectors, the unitary DFT, seeded random streams, special
//! functions and the reverse-mode differentiation tape.

mod complex;
pub mod dft;
pub mod gradcheck;
mod params;
mod rng;
pub mod special;
mod tape;

pub use complex::ComplexVec;
pub use dft::{dft, idft};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamStore, Tensor};
pub use rng::{derive_seed, sample_complex_gaussian, RngStream};
pub use special::{digamma, lgamma, trigamma};
pub use tape::{Bound, Gradients, Tape, Unary, Var};
