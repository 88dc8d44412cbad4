//! Dense 2-D tensors, a reverse-mode gradient tape, and the optimiser.
//!
//! Batches are laid out features × batch: one column per sample.

pub mod fastmath;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use optim::{adam_step, clip_global_norm, AdamState, OneCycleSchedule};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor2D;

pub(crate) use tensor::{matmul_into, View};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("tape is empty")]
    EmptyTape,
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}
