use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Scalar types the substrate can compute with.
///
/// `f32` is the default training precision; `f64` backs the
/// finite-difference gradient checks, which are unreliable at 32 bits.
pub trait Scalar:
    Float + num_traits::NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
