//! Differentiable dense-tensor kernels.
//!
//! A [`Tape`] records every kernel applied during a forward pass together
//! with whatever each kernel needs to run its adjoint (argmax memos, LSTM
//! gate activations, batch-norm statistics). [`Tape::backward`] replays the
//! record in reverse and returns gradients for every leaf created with
//! [`Tape::variable`]. [`grad_check`] compares those gradients against
//! central finite differences.
//!
//! Kernels work on `f64` throughout. Tensors that carry a batch use the
//! leading axis for it.

mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
mod loss;
mod lstm;
mod norm;
mod shape;
mod tape;
mod tensor;

pub use elementwise::UnaryKind;
pub use gradcheck::{grad_check, GradCheckReport, InputCheck, REL_ERROR_FLOOR};
pub use lstm::LstmWeights;
pub use norm::{BatchNormMode, BatchStats};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("`{op}` needs a scalar output, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("variable {0} is not recorded on this tape (backward before forward?)")]
    UnknownVar(usize),
    #[error("invalid argument to `{op}`: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Self::InvalidArgument { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, NumericsError>;
