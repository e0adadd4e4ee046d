//! Dense float64 tensors and a reverse-mode differentiation tape.
//!
//! Everything the encoder and the loss terms need is expressed through the
//! primitive ops recorded on [`Tape`]; gradients come from a single reverse
//! replay. All arithmetic is `f64` and every op output is checked finite,
//! so NaN/Inf surfaces as an error instead of poisoning a training run.

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_multi};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op} on empty input")]
    EmptyInput { op: &'static str },
    #[error("index {index} out of bounds for {op} (len {len})")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("degenerate zero-norm vector passed to {op}")]
    DegenerateVector { op: &'static str },
    #[error("backward root must be a scalar, got shape {got:?}")]
    NonScalarRoot { got: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
