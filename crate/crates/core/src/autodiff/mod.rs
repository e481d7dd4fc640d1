//! Minimal reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]s. A [`Tape`] records every operation applied to
//! [`Var`] handles during a forward pass; [`Tape::backward`] then replays the
//! record in reverse and accumulates gradients into the leaves. Trainable
//! parameters are held in a [`ParamSet`] and bound onto a fresh tape for each
//! step.

mod gradcheck;
mod init;
mod optim;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use init::{fan_in_uniform, xavier_uniform, Init};
pub use optim::{Adam, AdamConfig, Bound, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Real:
    num_traits::Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
