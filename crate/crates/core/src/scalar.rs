//! Floating-point scalar abstraction shared by every real-valued computation.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used for feature values, thresholds, vote weights and
/// centroids. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant. Finite values and infinities are always
    /// representable in `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn from_count(v: usize) -> Self {
        Self::from_usize(v).unwrap_or_else(Self::infinity)
    }

    #[inline]
    fn from_sum(v: u64) -> Self {
        Self::from_u64(v).unwrap_or_else(Self::infinity)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Rounds a non-negative real to the nearest integer, halves away from zero.
#[inline]
pub(crate) fn round_to_usize<T: Scalar>(v: T) -> usize {
    v.round().to_usize().unwrap_or(0)
}
