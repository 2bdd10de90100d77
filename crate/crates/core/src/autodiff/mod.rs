//! Dense fp64 tensors with reverse-mode differentiation.
//!
//! Values are recorded on a [`Tape`] as they are computed; each op returns a
//! [`Var`] handle. [`Tape::backward`] sweeps the tape once in reverse and
//! accumulates gradients into the leaves created with [`Tape::param`].
//!
//! Feature maps are channels-first: a rank-2 tensor `(channels, n)` holds
//! one column per event, so linear layers and 1D convolutions both run over
//! contiguous rows.
//!
//! ```
//! use evderain_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

mod check;
mod ops;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheck, GradCheckReport};
pub use ops::BatchStats;
pub use tape::{CustomOp, Tape, Var};
pub use tensor::Tensor;
