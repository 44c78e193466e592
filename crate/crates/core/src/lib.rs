//! Weighted clustered-coefficients (WCC) regression for survey data.
//!
//! Each location gets its own coefficient vector; a pairwise SCAD penalty on
//! coefficient differences fuses locations into groups. The weighted loss
//! uses inverse inclusion probabilities so that estimates target the finite
//! population under informative sampling.
//!
//! - [`model`]: datasets, configurations, results.
//! - [`penalty`]: SCAD and its proximal maps.
//! - [`admm`]: the solver.
//! - [`grouping`]: partitions from converged slack variables.
//! - [`selection`]: modified BIC over a λ grid.
//! - [`metrics`]: ARI and RMSE.
//! - [`simulation`]: populations, Poisson sampling, Monte Carlo.
//! - [`io`]: CSV ingestion and JSON reports.
//! - [`standardize`]: column scaling with a back-transform.

pub mod admm;
pub mod error;
pub mod grouping;
pub mod io;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod selection;
pub mod serde_util;
pub mod simulation;
pub mod standardize;

pub(crate) use serde_util::{mat as serde_mat, vec as serde_vec};

pub use admm::{fit, AdmmSolver};
pub use error::{Result, WccError};
pub use grouping::{extract_partition, refit_oracle};
pub use model::{validate, AdmmConfig, Dataset, FitResult, LocationBlock, Partition, PenaltyParams};
pub use penalty::ScadSpec;
pub use selection::{select_lambda, BicKind, BicVariant, Selection};
pub use standardize::Standardization;
