use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Scalar type of the numeric core: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Debug + Display + LowerExp + Default + Sum
{
    /// Convert an `f64` literal. Panics only for types that cannot represent finite f64 values.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon as an f64, for tolerance scaling.
    fn eps_f64() -> f64 {
        Self::epsilon().as_f64()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::lit(x)
}

pub(crate) fn sup_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub(crate) fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
}

pub(crate) fn min_of<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::infinity(), |m, &x| m.min(x))
}
