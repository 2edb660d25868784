//! Dense tensors and reverse-mode automatic differentiation.

mod graph;
mod gradcheck;
mod params;
pub(crate) mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use gradcheck::grad_check;
pub use params::{xavier_uniform, ParamStore};
pub use scalar::{gemm, DType, Scalar};
pub use tensor::Tensor;
