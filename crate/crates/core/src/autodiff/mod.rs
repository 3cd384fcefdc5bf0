//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters live in
//! [`Tensor`]s owned by the models; the graph borrows them as leaves, and
//! [`Graph::backward`] returns the leaf gradients so the caller can fold them
//! back into the parameters and take an [`AdamState`] step.
//!
//! ```
//! use textgan::autodiff::{Graph, Tensor};
//!
//! let w = Tensor::parameter(vec![2], vec![3.0, -1.0]).unwrap();
//! let mut g = Graph::new();
//! let wv = g.leaf(&w);
//! let sq = g.mul(wv, wv).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(wv).unwrap(), &[6.0, -2.0]);
//! ```

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{dropout_mask, BatchStats, Gradients, Graph, Var};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use tensor::{Parameterized, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("batch_norm: training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward: loss must have exactly one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("adam: non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
