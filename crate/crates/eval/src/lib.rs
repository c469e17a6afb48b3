//! Evaluation suite: top-1 accuracy, normalized confusion matrices,
//! multi-seed aggregation, cross-dataset transfer matrices with winner
//! analysis, and deterministic report/figure emission.

pub mod figures;
pub mod metrics;
pub mod report;
pub mod transfer;

pub use metrics::{aggregate_runs, argmax_row, confusion, top1, ConfusionMatrix, EvalReport, Provenance};
pub use report::{emit_report, emit_transfer, ReportInputs};
pub use transfer::{cross_eval, winner, CrossEvalSubject, TransferMatrix, WinnerCell, WinnerMatrix};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("prediction/label length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("reports disagree on {0}; aggregation requires one (dataset, method, shots) key")]
    KeyMismatch(String),
    #[error("cross-dataset evaluation is unsupported for method {0} (no class-name seam)")]
    UnsupportedMethod(String),
    #[error("transfer grids are not aligned: {0}")]
    GridMismatch(String),
    #[error("image {id}: {problem}")]
    ImageIo { id: String, problem: String },
    #[error(transparent)]
    Method(#[from] rsprompt_methods::MethodError),
    #[error(transparent)]
    Backbone(#[from] rsprompt_backbone::BackboneError),
    #[error(transparent)]
    Data(#[from] rsprompt_data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
