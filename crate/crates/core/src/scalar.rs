//! Scalar abstraction: every numeric kernel in this crate is generic over
//! the floating-point type. `f64` is the working precision of the pipeline;
//! `f32` is supported for storage-parity checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum<Self> + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lowering an `f64` literal into the working scalar type.
#[inline]
pub fn cast<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("f64 literal representable in scalar type")
}
