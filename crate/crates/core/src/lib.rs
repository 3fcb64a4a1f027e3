//! Hierarchical co-matching for multiple-choice reading comprehension.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which every shipped tool uses.

pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Matrix<f64>;
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type EmbeddingTable = data::EmbeddingTable<f64>;
pub type Checkpoint = train::Checkpoint<f64>;
pub type AdamState = train::AdamState<f64>;
