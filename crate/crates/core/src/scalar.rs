use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the statistics and network code.
///
/// Implemented for `f32` and `f64`. All constants are routed through
/// [`Scalar::of`] so that seeded initialisation draws the same `f64`
/// sequence regardless of the target precision.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` constant into this scalar type.
    fn of(value: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Short name written into serialized model files.
    fn type_name() -> &'static str;
}

impl Scalar for f64 {
    #[inline]
    fn of(value: f64) -> Self {
        value
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn type_name() -> &'static str {
        "f64"
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn type_name() -> &'static str {
        "f32"
    }
}
