//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! The tape records every operation in a [`Graph`]. Backward passes are
//! themselves built from graph operations, so gradients can be recorded
//! (`create_graph = true`) and differentiated a second time. This is what
//! makes the meta-gradient through an unrolled inner loop possible without
//! ever forming a Hessian.

mod fd;
mod graph;
mod tensor;

pub use fd::finite_difference_check;
pub use graph::{sigmoid, softplus, GradMap, Graph, OpKind, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported operation `{0}`")]
    UnsupportedOp(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("node {0} does not belong to this graph")]
    NodeNotInGraph(usize),
    #[error("node {0} does not require gradients")]
    NotDifferentiable(usize),
    #[error("finite difference step must be positive, got {0}")]
    InvalidStep(f64),
}
