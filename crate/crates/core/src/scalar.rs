//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar the simulator and the closed-form models are generic over.
///
/// Implemented for `f32` and `f64`. Random variates are always drawn in `f64`
/// and converted, so a given seed yields the same stream for either width.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Sum + Default + Display + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + FftNum
        + Sum
        + Default
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// Sequential sum; keeps reductions independent of worker count.
pub(crate) fn ordered_sum<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &x| acc + x)
}

pub(crate) fn ordered_mean<T: Real>(xs: &[T]) -> T {
    ordered_sum(xs) / T::from_usize_lossy(xs.len())
}
