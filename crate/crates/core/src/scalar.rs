//! Scalar abstraction for the numeric core.
//!
//! Everything under [`crate::tensor`], the knowledge maps and the model run
//! over any `Scalar`. The crate root exports `f64` aliases, which is what the
//! training harness and the CLI use; `f32` stays available for callers that
//! want the smaller footprint.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type of tensors and knowledge maps.
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
    /// Conversion from an `f64` constant (hyperparameters, literals).
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Widening view used by serialization and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_f64() {
        assert_eq!(f32::from_config(0.25).as_f64(), 0.25);
        assert_eq!(f64::from_config(1e-12), 1e-12);
    }
}
