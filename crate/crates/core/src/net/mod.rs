//! Minimal differentiable computation layer: dense linear maps, softmax,
//! ReLU, layer normalization, embedding lookup, cross-entropy,
//! reverse-mode gradients, and Adam.
//!
//! A tape and its parameter store are single-threaded during one
//! forward+backward pass; distinct tapes over a shared frozen store may
//! run on distinct threads, which is how batches are parallelized.

pub mod init;
mod ops;
mod params;
mod tape;

pub use ops::{
    cross_entropy, cross_entropy_backward, layer_norm, layer_norm_backward, relu, relu_backward,
    softmax_rows, softmax_rows_backward, LN_VAR_EPS,
};
pub use params::{AdamParams, GradBuffer, ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Shape(#[from] crate::linalg::LinalgError),
    #[error("gain/bias lengths ({gain}, {bias}) do not match {cols} columns")]
    GainBiasLength { cols: usize, gain: usize, bias: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{labels} labels for {rows} logit rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("embedding index {index} out of range for table with {rows} rows")]
    EmbedIndex { index: usize, rows: usize },
    #[error("backward called on a node that was never forwarded")]
    BackwardBeforeForward,
    #[error("loss node must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
