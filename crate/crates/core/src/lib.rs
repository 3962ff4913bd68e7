//! Small-scale Transformer encoder in two head-combination variants
//! (concatenation and addition) together with a numerical toolkit for
//! probing whether the attention weights of a head can be recovered
//! uniquely from its output.
//!
//! The crate is organized around five modules:
//!
//! - [`linalg`] — dense matrices, SVD, numerical rank, null-space bases,
//!   least squares.
//! - [`net`] — a minimal reverse-mode autodiff tape, the elementwise
//!   kernels (softmax, layer norm, cross-entropy) and an Adam optimizer.
//! - [`encoder`] — a single encoder layer with per-head capture hooks
//!   exposing Q, K, V, attention logits/weights, and the effective
//!   output transform T.
//! - [`identifiability`] — alternative-attention construction under the
//!   logit-rank and simplex constraint systems, softmax inversion, and
//!   the constraint checker.
//! - [`data`] — text-classification ingestion: tokenization, vocabulary,
//!   splits, batching.

pub mod data;
pub mod encoder;
pub mod identifiability;
pub mod linalg;
pub mod net;
pub mod train;

pub use encoder::{EncoderConfig, EncoderModel, HeadCapture, Variant};
pub use linalg::{Matrix, RankReport};
