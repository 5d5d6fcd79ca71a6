//! Minimal dense tensor substrate: storage, a recording tape with
//! reverse-mode gradients, fused attention and layer-norm kernels, Adam,
//! and finite-difference gradient checking.

mod error;
mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
mod optim;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use scalar::Scalar;
pub use tensor::{numel, Tensor};
