//! Video SemNet: learns video embeddings from plot summaries with a
//! memory-augmented network trained under a triplet ranking loss.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient audits); the aliases below name the concrete types.

pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod memory;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod semantic_learner;
pub mod tensor_core;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = tensor_core::Tensor<f32>;
pub type Tensor64 = tensor_core::Tensor<f64>;
pub type Graph32 = tensor_core::Graph<f32>;
pub type Graph64 = tensor_core::Graph<f64>;
pub type ParameterStore32 = tensor_core::ParameterStore<f32>;
pub type ParameterStore64 = tensor_core::ParameterStore<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type MemoryState32 = memory::MemoryState<f32>;
pub type MemoryState64 = memory::MemoryState<f64>;
pub type Vocabulary32 = encoders::Vocabulary<f32>;
