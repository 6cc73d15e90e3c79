//! Floating-point scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the rate model, transform and solver are written against.
///
/// Implemented for `f32` and `f64`. The solver tolerances in this crate are
/// calibrated for `f64`; `f32` is usable for coarse evaluations.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Natural log of two.
    #[inline]
    fn ln2() -> Self {
        Self::lit(std::f64::consts::LN_2)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn sum<T: Scalar>(it: impl IntoIterator<Item = T>) -> T {
    it.into_iter().fold(T::zero(), |acc, v| acc + v)
}
