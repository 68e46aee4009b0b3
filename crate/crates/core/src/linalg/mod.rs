//! Dense linear algebra, elementwise nonlinearities, normalization and
//! seeded initialization.
//!
//! Everything is generic over [`Real`], which is implemented for `f32`
//! (training) and `f64` (gradient checks). A run picks one precision and
//! never mixes the two.

mod matrix;
mod ops;
mod rng;

pub use matrix::{outer, Matrix};
pub(crate) use ops::{layernorm_backward_into, layernorm_in_place};
pub use ops::{
    axpy, dot, layernorm, layernorm_backward, mean, relu, relu_grad, tanh, tanh_grad, LAYERNORM_EPS,
};
pub use rng::SeededRng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type used throughout the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Bit width, reported in checkpoints and config.
    const BITS: u32;

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64_lossy(x)
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Concatenate slices into a fresh vector.
pub fn concat<T: Copy>(parts: &[&[T]]) -> Vec<T> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}
