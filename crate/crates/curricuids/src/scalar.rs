//! Scalar abstraction: the numeric element type of tensors and models.
//!
//! Training runs in `f64` (finite-difference gradient checks need the
//! precision); compressed models dequantize into `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals and RNG output.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
