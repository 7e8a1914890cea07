use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::{DesignError, ModelError, Term};
use crate::strata::StrataError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Strata(#[from] StrataError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("primary terms are rank deficient over the candidate set")]
    RankDeficientCandidates,
    /// Potential term `index` (0-based within the potential list) is
    /// constant over the candidate set after centering.
    #[error("potential term {term} has zero range over the candidate set")]
    ZeroRange { index: usize, term: Term },
    #[error("scaling map was fitted for a different model")]
    ScalingMismatch,
    #[error("tau must be a positive finite number, got {0}")]
    InvalidTau(f64),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("every design is singular under scenario {scenario}")]
    AllSingular { scenario: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
