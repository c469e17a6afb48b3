//! Dataset registry: nine adapters with fixed descriptors, line-oriented
//! split manifests, versioned label normalization, and the class-balanced
//! k-shot sampler every method consumes.

pub mod descriptor;
pub mod guard;
pub mod labels;
pub mod manifest;
pub mod sampler;
pub mod synth;

pub use descriptor::{all_builtin, builtin, download_instructions, DatasetDescriptor};
pub use guard::{
    enter_evaluation, enter_training, is_evaluation_phase, is_training_phase,
    EvaluationPhaseGuard, TrainingPhaseGuard,
};
pub use labels::{normalize_label, LabelMap};
pub use manifest::{Dataset, Split, SplitManifest};
pub use sampler::{sample_few_shot, sample_validation, FewShotManifest, ALLOWED_SHOTS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("label {0:?} is not covered by the label map (map version {1})")]
    UnmappedLabel(String, String),
    #[error("label map {0}: {1}")]
    BadLabelMap(String, String),
    #[error("manifest {path}: {problem}")]
    BadManifest { path: String, problem: String },
    #[error("integrity: dataset {name}: expected {expected} {what}, found {found}")]
    Integrity {
        name: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("missing image on disk: {0}")]
    MissingImage(String),
    #[error("shots must be one of {ALLOWED_SHOTS:?}, got {0}")]
    BadShotCount(usize),
    #[error("class {class:?} has only {available} training images, need {needed}")]
    NotEnoughImages {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
