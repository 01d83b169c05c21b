//! Deterministic reverse-mode differentiation over NCHW tensors.

mod adam;
mod graph;
pub mod init;
mod kernels;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Shape, Tensor};
