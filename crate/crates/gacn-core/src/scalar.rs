//! Scalar abstraction: all numeric kernels are generic over a float type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point scalar usable throughout the crate (`f32` or `f64`).
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lower clamp bound applied wherever a probability feeds a logarithm.
    const PROB_FLOOR: Self;
    /// Upper clamp bound applied wherever a probability feeds a logarithm.
    /// For `f32` the gap below 1 is widened to stay representable.
    const PROB_CEIL: Self;

    /// Conversion from `f64`, for constants and file input.
    fn cast(x: f64) -> Self;

    /// Conversion to `f64`, for metrics and file output.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const PROB_FLOOR: Self = 1e-7;
    const PROB_CEIL: Self = 1.0 - 1e-6;

    fn cast(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PROB_FLOOR: Self = 1e-12;
    const PROB_CEIL: Self = 1.0 - 1e-12;

    fn cast(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}
