//! Scalar abstraction for the numeric kernels.
//!
//! All physics and calibration math is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`. The crate root exports `f64` aliases for the
//! common types; `f64` is what the calibration tolerances are specified for.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable in every kernel of this crate.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent ordinary finite values,
/// which cannot happen for the `f32`/`f64` implementations above.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 must convert to scalar")
}

/// Lossy view of any scalar as `f64`, used for diagnostics and reports.
#[inline]
pub fn as_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar must convert to f64")
}
