//! A from-scratch encoder-decoder that is pre-trained in two stages (masked
//! reconstruction of a context, then generation of its continuation) and
//! fine-tuned for context-conditioned generation with a copy mechanism.
//!
//! Numerics are generic over [`scalar::Scalar`]; training runs in `f32` and the
//! gradient checks in `f64`.

pub mod autograd;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kv;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod training;

pub use error::{Error, Result};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
