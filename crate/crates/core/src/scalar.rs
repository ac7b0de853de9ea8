//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point scalar the core is generic over.
///
/// Implemented by `f32` and `f64` through the blanket impl; everything the
/// algorithms need beyond `num_traits::Float` is assignment ops, summation
/// and thread-safety bounds for the parallel loops.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl<S> Real for S where
    S: Float
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from(v).expect("constant not representable in scalar type")
}

/// Converts a count into the working scalar type.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    real(n as f64)
}
