//! Real scalar abstraction shared by the dense kernel and the signal ledger.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point type usable as the real part of a complex coefficient.
///
/// Implemented for `f32` and `f64`. Tolerances are expressed in `f64` and
/// converted with [`Real::lit`].
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Squared modulus without the square root.
#[inline]
pub fn abs2<T: Real>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}
