//! The four prompt-learning mechanisms as pure forward/loss computations
//! over the frozen backbone, plus the zero-shot classifier, textual
//! diversity targets, and snapshot self-ensembling.

pub mod aggregate;
pub mod check;
pub mod forward;
pub mod infer;
pub mod prompt;
pub mod state;
pub mod templates;
pub mod zeroshot;

pub use aggregate::{gaussian_prompt_aggregate, gaussian_weights};
pub use forward::{
    forward, loss, ForwardOutput, FrozenTargets, ImageBatch, LossComponents, PromptsrcOutputs,
};
pub use infer::{class_text_features, eval_logits, prompted_image_features};
pub use state::{BoundState, ClassTokenPosition, Method, MethodConfig, MetaNet, PromptState};
pub use templates::{default_templates, load_templates, textual_diversity_targets};
pub use zeroshot::{build_zeroshot_classifier, ClassifierBank};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MethodError {
    #[error(transparent)]
    Backbone(#[from] rsprompt_backbone::BackboneError),
    #[error("class vocabulary is empty")]
    EmptyVocabulary,
    #[error("init template must tokenize to {expected} tokens, got {got}")]
    TemplateLength { expected: usize, got: usize },
    #[error("class vocabulary does not match the one used at initialization")]
    VocabularyMismatch,
    #[error("expected {expected}, got method {got:?}")]
    MethodMismatch { expected: String, got: Method },
    #[error("template list is empty")]
    EmptyTemplates,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("tensor mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing forward input: {0}")]
    MissingInput(&'static str),
    #[error("no snapshots to aggregate")]
    EmptySnapshots,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
