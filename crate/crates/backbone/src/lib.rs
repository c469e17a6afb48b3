//! Frozen dual-encoder backbone: tokenization, text/image encoding with
//! prompt-injection hooks, preprocessing, and scaled cosine-similarity
//! logits. Weights are immutable after load; every bundle exposes a stable
//! content digest for provenance.

pub mod archive;
pub mod bundle;
pub mod encoder;
pub mod preprocess;
pub mod tokenizer;

pub use bundle::{
    joint_from_node, similarity_logits, BackboneBundle, BackboneGeometry, BundleMetadata,
    EmbeddedPrompt, JointEmbedding,
};
pub use encoder::Injection;
pub use preprocess::PreprocessSpec;
pub use tokenizer::{TokenSequence, Tokenizer, CONTEXT_LEN};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("token id {id} outside vocabulary of {vocab}")]
    InvalidToken { id: u32, vocab: usize },
    #[error("tensor {name}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("archive is missing tensor {0}")]
    MissingTensor(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("tokenizer error: {0}")]
    Tokenizer(String),
    #[error("injection at layer {layer} exceeds encoder depth {layers}")]
    InjectionDepth { layer: usize, layers: usize },
    #[error("injection shape mismatch: expected {expected:?}, got {got:?}")]
    InjectionShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("image shape mismatch: expected {expected:?}, got {got:?}")]
    BadImageShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("embedding is not normalized")]
    NotNormalized,
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
