//! Scalar abstraction: all numeric code is generic over `Scalar`, which is
//! implemented for `f32` and `f64`.
//!
//! Training normally runs in `f32`; the gradient-oracle tests instantiate the
//! same code with `f64` so finite-difference comparisons are meaningful.
//! Random draws are always taken in `f64` and converted, so both
//! instantiations see the same sequence of values (up to rounding).

use ndarray::NdFloat;
use std::iter::Sum;

/// Floating-point scalar usable everywhere in the crate.
///
/// `NdFloat` brings `Float`, `ScalarOperand` and `LinalgScalar`, so `.dot()`
/// on 2-d arrays dispatches to the fast f32/f64 matrix-multiply kernels.
pub trait Scalar: NdFloat + Sum<Self> + Send + Sync + 'static {
    /// Lossy conversion from `f64` (identity for `f64`).
    fn from_f64(v: f64) -> Self;
    /// Widening conversion to `f64` (identity for `f64`).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
