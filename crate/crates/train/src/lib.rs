//! Training engine for prompt states: SGD over prompt parameters only,
//! first-epoch warmup then cosine annealing, per-epoch snapshots for
//! self-ensembling, and bit-exact checkpoint persistence.

pub mod checkpoint;
pub mod engine;
pub mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use engine::{train, EpochRecord, StepRecord, TrainOutcome};
pub use schedule::lr_at;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Optimizer and loop settings. Method-specific defaults follow the
/// published recipe: 50 epochs, batch 4, warmup 1e-5 for epoch one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults_for(method: rsprompt_methods::Method) -> Self {
        use rsprompt_methods::Method;
        let learning_rate = match method {
            Method::Maple => 0.0035,
            Method::Promptsrc => 0.0025,
            _ => 0.002,
        };
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate,
            warmup_lr: 1e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.warmup_lr <= 0.0 {
            return Err(TrainError::BadConfig("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Method(#[from] rsprompt_methods::MethodError),
    #[error(transparent)]
    Backbone(#[from] rsprompt_backbone::BackboneError),
    #[error(transparent)]
    Data(#[from] rsprompt_data::DataError),
    #[error("image {id}: {problem}")]
    ImageIo { id: String, problem: String },
    #[error(
        "non-finite loss at epoch {epoch} step {step} (lr {lr}); batch: {batch_ids:?}"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        batch_ids: Vec<String>,
    },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint was produced against backbone {expected}, current is {got}")]
    DigestMismatch { expected: String, got: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
