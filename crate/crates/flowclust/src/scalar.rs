//! Scalar abstraction: every numerical routine in this crate is generic over
//! [`Scalar`], instantiated in practice with `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the flow/clustering pipeline.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for tolerances and literals.
    #[inline]
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable")
    }

    /// Lossy conversion to `f64`, for reporting and serialization.
    #[inline]
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// Lossy conversion from `usize` (node counts, iteration counts).
    #[inline]
    fn from_usize_c(x: usize) -> Self {
        Self::from_usize(x).expect("usize not representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
