//! Dense double-precision tensors, layer kernels with analytic gradients, the
//! Q-network, Adam and parameter checkpoints.

mod adam;
pub mod checkpoint;
pub mod layers;
mod network;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, ConvGradients, FcGradients,
};
pub use network::{init_params, ConvSpec, ForwardTrace, LayerParams, NetworkParams, NetworkSpec, QNetwork};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("2x2 max-pool needs even extents, got {height}x{width}")]
    OddPoolExtent { height: usize, width: usize },
    #[error("non-finite {context} in tensor {tensor} at index {index}: {value}")]
    NonFinite {
        context: &'static str,
        tensor: usize,
        index: usize,
        value: f64,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(context: &'static str, expected: String, got: String) -> Self {
        NnError::ShapeMismatch { context, expected, got }
    }
}
