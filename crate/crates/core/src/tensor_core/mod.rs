//! Dense tensors, forward kernels, reverse-mode autodiff, parameters,
//! optimizers and the tensor container format.

pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod params;
mod tensor;

pub use container::{Container, TensorData};
pub use gradcheck::{grad_check, grad_check_filtered, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{
    activation, batchnorm, conv1d, cosine_similarity, matmul, maxpool1d, softmax, ActivationKind, NormMode,
    RunningStats,
};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use params::{Bindings, Init, ParameterStore};
pub use tensor::Tensor;
