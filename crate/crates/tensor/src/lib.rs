//! Dense `f64` tensors with a recording tape for reverse-mode gradients.
//!
//! Sized for graphs of tens of nodes: everything is row-major `Vec<f64>`,
//! rank is capped at 2 and the only broadcast is a bias row added to every
//! row of a matrix. Every recorded operation checks its output for NaN/Inf.
//!
//! ```
//! use csg_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.insert("x", Tensor::scalar(3.0));
//! let mut tape = Tape::new();
//! let xv = tape.param(x, store.get(x).clone()).unwrap();
//! let sq = tape.mul(xv, xv).unwrap();
//! let grads = tape.backward(sq).unwrap();
//! assert_eq!(grads.param(x).unwrap().item(), Some(6.0));
//! ```

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint, CheckpointError, FORMAT_VERSION, MAGIC,
};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensors above rank 2 are not supported (rank {0})")]
    Rank(usize),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for length {len} in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("mask length {got} does not match {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("{0} of an empty input")]
    Empty(&'static str),
}

/// Logistic function, numerically stable for large `|v|`.
pub fn sigmoid(v: f64) -> f64 {
    tape::sigmoid(v)
}
