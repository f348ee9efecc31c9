//! Minimal reverse-mode autodiff on dense `f64` tensors.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use gradcheck::check_gradients;
pub use graph::{Graph, Var};
pub use layers::{
    channel_stats, pair_indices, Calibration, Conv, ConvBlock, Dense, GraphNet, Gru, GruCell, Mlp,
};
pub use params::{clip_grad_norm, Adam, Param, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in `{op}`")]
    NonFinite { op: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
