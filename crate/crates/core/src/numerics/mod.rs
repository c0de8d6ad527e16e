//! Minimal reverse-mode automatic differentiation over dense tensors.

mod float;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use float::Float;
pub use gradcheck::{grad_check, grad_check_multi, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Tensor, MAX_RANK};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
