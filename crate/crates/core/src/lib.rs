//! Desk-scale abstractive summarization lab.
//!
//! The pipeline trains a character-level attentional seq2seq summarizer whose
//! source representation is supervised by a summary autoencoder: the two
//! encoders produce fixed-size representations `z_t` (source content) and
//! `z_s` (summary), a shared attentional LSTM decoder reconstructs the
//! summary from either one, and an L2 supervision term plus an adversarial
//! discriminator pull `z_t` towards `z_s` during training.
//!
//! Everything runs on a small reverse-mode differentiation substrate in
//! [`numerics`], generic over the scalar type: training uses `f32`, while
//! gradient checking runs the same graphs at `f64` where central finite
//! differences are trustworthy.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod probe;
pub mod rouge;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::graph::{Graph, ValueId};
pub use numerics::scalar::Scalar;
pub use numerics::tensor::Tensor;

/// Default compute precision for training and inference.
pub type Real = f32;
/// Precision used by the finite-difference gradient checks.
pub type CheckReal = f64;

pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
