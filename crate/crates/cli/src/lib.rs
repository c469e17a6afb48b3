//! Experiment orchestration library behind the `rsprompt` binary.

pub mod config;
pub mod ops;
pub mod plan;

pub use config::ExperimentConfig;
pub use ops::MethodKind;
pub use plan::{ExperimentPlan, Task, TaskStatus};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what}: {problem}")]
    Task { what: String, problem: String },
    #[error(transparent)]
    Backbone(#[from] rsprompt_backbone::BackboneError),
    #[error(transparent)]
    Method(#[from] rsprompt_methods::MethodError),
    #[error(transparent)]
    Data(#[from] rsprompt_data::DataError),
    #[error(transparent)]
    Train(#[from] rsprompt_train::TrainError),
    #[error(transparent)]
    Eval(#[from] rsprompt_eval::EvalError),
    #[error(transparent)]
    Probe(#[from] rsprompt_probe::ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 1 for task failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
