//! Linear-probe baseline: multinomial logistic regression on frozen image
//! features, L-BFGS solver, two-stage regularization search.

pub mod features;
pub mod logreg;
pub mod search;

pub use features::{extract_features, FeatureTable};
pub use logreg::{evaluate_probe, fit_probe, predict, ProbeModel, SolverTrace};
pub use search::{search_c, search_c_with, SearchConfig, SearchTrace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Backbone(#[from] rsprompt_backbone::BackboneError),
    #[error("image {id}: {problem}")]
    ImageIo { id: String, problem: String },
    #[error("feature table is empty")]
    EmptyTable,
    #[error("class {0} has no examples in the table")]
    MissingClass(usize),
    #[error("regularization strength must be positive, got {0}")]
    BadRegularization(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
