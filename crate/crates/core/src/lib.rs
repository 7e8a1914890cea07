//! Optimal designs for multistratum experiments under the generalized
//! Bayesian D criterion.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices and SPD factorizations.
//! - [`model`]: factors, polynomial terms, model specs and designs.
//! - [`strata`]: stratum structures, variance ratios and the covariance Σ.
//! - [`criterion`]: potential-term scaling and the D / GBD criteria.
//! - [`search`]: multi-start coordinate exchange.
//! - [`analysis`]: efficiency tables, submodel variances and sweeps.

pub mod analysis;
pub mod criterion;
pub mod error;
pub mod linalg;
pub mod model;
pub mod search;
pub mod strata;

pub use criterion::{
    apply_scaling, candidate_set, d_value, efficiency, fit_scaling, gbd_value, posterior_moments,
    posterior_from_matrix, recommend_tau, CriterionConfig, Evaluator, PosteriorMoments, ScalingMap, WORST,
};
pub use error::{Error, Result};
pub use linalg::{Matrix, SpdFactorization};
pub use model::{Design, Factor, ModelSpec, Term, TermKind};
pub use search::{optimize, SearchConfig, SearchResult};
pub use strata::{StratumStructure, VarianceRatios};
