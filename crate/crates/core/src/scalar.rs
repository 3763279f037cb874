//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the numeric core: `f32` or `f64`.
///
/// Everything statistical is written against this trait; file formats and
/// the design generator work in `f64` and convert at the boundary.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values the target type
    /// cannot represent at all (never for finite literals into f32/f64).
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(value: usize) -> Self {
        Self::lit(value as f64)
    }

    /// Machine epsilon of the concrete type.
    fn machine_epsilon() -> Self;
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}
