//! Sparse and low-rank estimation for finite mixtures of multivariate-response
//! Gaussian linear regressions.
//!
//! The pipeline has three stages:
//!
//! 1. [`lasso_em`] fits an l1-penalized mixture over a data-driven grid of
//!    regularization levels and reads off candidate sets of relevant columns.
//! 2. [`rank_em`] refits each candidate support with per-cluster rank
//!    constraints using a classification EM with singular-value truncation.
//! 3. [`selection`] picks one model from the resulting [`collection`] with a
//!    dimension-proportional penalized likelihood.
//!
//! [`metrics`] and [`simgen`] provide the divergences and the synthetic
//! benchmark used to evaluate the procedure end to end.

pub mod collection;
pub mod error;
pub mod ingest;
pub mod init;
pub mod lasso_em;
pub mod metrics;
pub mod model;
pub mod rank_em;
pub mod selection;
pub mod simgen;

pub use nalgebra;

pub use collection::{build_collection, Collection, CollectionConfig, Provenance, RankMode};
pub use error::{MixError, Result};
pub use lasso_em::{estep, lambda_grid, lasso_em_fit, LassoFitConfig, Responsibilities, SupportResult};
pub use model::{
    dimension, log_likelihood, mixture_density, BoundsConfig, Dataset, DimensionMode, ModelIndex,
    MixtureRegressionModel, RescaledParameters,
};
pub use rank_em::{ols_fit, rank_em_fit, rank_truncate, FittedModel, RankFitConfig};
pub use selection::{
    kraft_weight, slope_select, theoretical_penalty, PenaltyConfig, SelectionMode, SelectionResult,
};
