//! The stance (SDQC) and veracity networks, their training loops, and the
//! classifiers that bundle a trained network with its fitted preprocessing.

pub mod classifier;
pub mod config;
pub mod predictions;
pub mod samples;
pub mod stance;
pub mod train;
pub mod veracity;

use thiserror::Error;

use crate::embeddings::EmbeddingError;
use crate::features::FeatureError;
use crate::nn::NnError;
use crate::thread_model::DataError;

pub use classifier::{train_pipeline, StanceClassifier, TrainedPipeline, VeracityClassifier};
pub use config::{ConfigA, ConfigB};
pub use predictions::{argmax, read_predictions, stance_estimate_map, write_predictions, Prediction};
pub use samples::{collate_stance, collate_veracity, stance_samples, veracity_samples, StanceBatch, StanceSample, VeracitySample};
pub use stance::StanceModel;
pub use train::{batch_indices, fit_stance, fit_veracity, TrainOutcome};
pub use veracity::VeracityModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no labelled training examples")]
    EmptyTraining,
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}
