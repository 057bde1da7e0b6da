//! Scalar abstraction shared by the numeric modules.
//!
//! Everything numeric in this crate is written against [`Real`], which is
//! implemented for `f32` and `f64`. Tolerances in the public API are given as
//! `f64` literals and are clamped to a few ULPs of the active type, so the
//! same code path runs (with looser guarantees) in single precision.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + ToPrimitive + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a scalar back to `f64` (for reporting and serialization).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// A requested tolerance, floored at 64 machine epsilons of `T`.
#[inline]
pub fn tol<T: Real>(requested: f64) -> T {
    let floor = to_f64(T::default_epsilon()) * 64.0;
    lit(requested.max(floor))
}
