//! Small differentiable function-approximation kit.
//!
//! Everything the agent and the world models need: dense layers, residual
//! blocks with row-wise L2 normalization, hand-written backpropagation for
//! the fixed architectures in [`network`], and an Adam optimizer.

mod adam;
pub mod gradcheck;
mod matrix;
pub mod network;
mod ops;
mod params;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::DenseMatrix;
pub use network::{NetLayout, NetSpec, Network, PassCounts};
pub use ops::{
    dense_backward, dense_forward, l2_normalize, l2_normalize_backward, l2_normalize_rows, relu,
    relu_backward, residual_block_forward, ResidualBlockRef, L2_EPS,
};
pub use params::{Gradients, ParameterSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}
