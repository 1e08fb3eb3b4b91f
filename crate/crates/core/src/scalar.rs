//! Floating point scalar used by the learning core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64. Everything the value-learning code needs from a number.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + LinalgScalar + ScalarOperand + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from f64; used when feeding features into a network.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
