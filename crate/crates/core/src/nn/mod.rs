//! Dense tensor kernels with hand-written adjoints.
//!
//! Everything here is double precision and pure: layers take their inputs and
//! parameters by reference and return new tensors. Backward functions take the
//! upstream gradient plus whatever forward inputs they need.

mod conv;
mod gemm;
mod gradcheck;
mod layers;
mod pool;
mod tensor;

pub use conv::{conv3d, conv3d_backward, conv3d_backward_opt, conv3d_direct, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    cross_entropy, linear, linear_backward, relu, relu_backward, softmax, softmax_backward, softmax_cross_entropy,
    softmax_slice, LinearGrads,
};
pub use pool::{maxpool3d, maxpool3d_backward, pool_output_shape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
