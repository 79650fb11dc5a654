//! Dense tensors, reverse-mode autodiff and the Adam optimizer.

pub mod graph;
pub mod kernels;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;
