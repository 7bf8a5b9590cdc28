//! Reverse-mode differentiation over per-frame sequence matrices.
//!
//! Every value on the [`Tape`] is a two-dimensional matrix whose rows are
//! frames and whose columns are channels. Scalars are `1 x 1` matrices.

mod functional;
pub mod gradcheck;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use functional::{entropy, log_softmax_rows, relu, softmax_rows, row_entropies};
pub use tape::{Tape, Var};

/// Floating-point element type used by the tape. Implemented for `f32`
/// (training) and `f64` (gradient checks).
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<F: Real>(v: f64) -> F {
    F::from_f64_lossy(v)
}
