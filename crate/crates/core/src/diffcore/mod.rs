//! Dense tensors with a recording tape for reverse-mode gradients.
//!
//! Every network in the crate (agent GRU, credit heads, ladders, VIB
//! encoder/decoder) is expressed with the primitives on [`Tape`]. Leaves
//! created with [`Tensor::with_grad`] accumulate `∂loss/∂leaf` on each
//! [`Tape::backward`] call; callers zero them explicitly.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    RankMismatch { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },
}
