//! Metrics, grouped cross validation, repeated-run statistics and reports.

pub mod cv;
pub mod metrics;
pub mod protocol;
pub mod report;

use thiserror::Error;

use crate::models::ModelError;

pub use cv::{grouped_kfold, mean_std, repeated_runs, summarize, FoldAssignment, Metrics, RunStats, RunSummary};
pub use metrics::{f1_scores, rmse, ConfusionMatrix, F1Scores, RMSE_DEFINITION};
pub use protocol::{cross_validate, CvOptions};
pub use report::{
    always_comment, evaluate_stance, evaluate_veracity, render, CvReport, EvalReport, FoldResult, NamedReport,
    ReportFile, Task,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation input mismatch: {0}")]
    Mismatch(String),
    #[error("fold error: {0}")]
    Fold(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
