//! Architecture search: a recurrent controller trained with REINFORCE over
//! child-model evaluations, an optional shared parameter store, derivation of
//! the final architecture, and a uniform random-search baseline.

pub mod child;
pub mod controller;
pub mod engine;
pub mod params;

pub use child::{train_child, ChildConfig, ChildOutcome};
pub use controller::{ControllerState, Episode, Sample};
pub use engine::{
    child_seed, derive, random_search, search, CandidateReport, ClockKind, DerivationConfig,
    DerivationReport, GridResult, SearchConfig, SearchOutcome, SearchTrace, TraceRecord,
};
pub use params::ParamDict;

use crate::gnn::ModelError;
use crate::space::SpaceError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("{0}")]
    Invalid(String),
}

/// True when the error is a numeric blowup inside a child model, which the
/// search loop absorbs as a zero-reward candidate rather than aborting.
pub(crate) fn is_divergence(e: &SearchError) -> bool {
    matches!(
        e,
        SearchError::Tensor(TensorError::NonFinite { .. })
            | SearchError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
    )
}
