//! A small neural network engine: exactly the layers, loss and optimizer the
//! stance and veracity models need, with hand-derived backward passes.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, ModelKind};
pub use layers::{
    channel_concat, channel_split, global_avg_pool, masked_avg_pool, masked_avg_pool_backward, relu,
    relu_backward, softmax, softmax_backward, BatchNorm, Conv1d, Dense, Dropout, Param,
};
pub use loss::{
    add_l2_grad, l2_penalty, softmax_cross_entropy_backward, weighted_cross_entropy,
    weighted_cross_entropy_backward, LossSpec,
};
pub use optim::Adam;
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
