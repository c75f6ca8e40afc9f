//! Dense `f64` tensors with reverse-mode differentiation, Gumbel-softmax
//! sampling and the Adam optimizer.

mod gumbel;
mod matrix;
mod optim;
pub mod rng;
mod tape;

pub use gumbel::{gumbel_noise, gumbel_softmax, gumbel_softmax_with_noise};
pub use matrix::DenseMatrix;
pub use optim::{linear_decay_lr, Adam, AdamConfig};
pub use rng::{RngState, RngStream};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: non-finite result")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("loss must be 1x1, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("{0}")]
    InvalidArgument(String),
}
