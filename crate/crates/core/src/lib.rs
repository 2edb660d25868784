//! Layout-aware transformer encoder for key information extraction from
//! form-like documents.
//!
//! * [`numerics`]: dense tensors with tape-based reverse-mode differentiation.
//! * [`spatial`]: box normalization and the relative four-vertex encoding.
//! * [`encoder`]: transformer encoder with spatial attention and ablations.
//! * [`objectives`]: token- and area-masked language model pre-training.
//! * [`heads`]: SPADE graph decoder and BIO tagger.
//! * [`data`]: synthetic documents, tokenizer, JSONL, order transforms.
//! * [`harness`]: training, evaluation, checkpoints and experiment runners.
//!
//! The math is generic over [`numerics::Scalar`]; training uses `f32` and
//! gradient checks use `f64`.

pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod numerics;
pub mod objectives;
pub mod spatial;

pub use error::{Error, Result};

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Params32 = numerics::ParamStore<f32>;
pub type Params64 = numerics::ParamStore<f64>;
pub type Graph32<'a> = numerics::Graph<'a, f32>;
pub type Graph64<'a> = numerics::Graph<'a, f64>;
