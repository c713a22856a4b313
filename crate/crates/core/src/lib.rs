//! Identification and estimation of usual-care treatment effects in a target
//! population from randomized-trial data when trial participation itself
//! affects the outcome.
//!
//! The crate is organized around the analysis pipeline:
//!
//! - [`graph`]: causal DAGs, single-world intervention graphs and d-separation.
//! - [`scm`]: a parametric structural causal model over discrete covariates,
//!   with a potential-outcome simulator and exact oracle estimands.
//! - [`data`]: the composite trial + target dataset and its CSV format.
//! - [`glm`]: logistic (IRLS) and least-squares nuisance fits.
//! - [`estimators`]: standardization, weighting, nonparticipant and
//!   relative-scale estimators with percentile bootstrap intervals.
//! - [`diagnostics`]: positivity, interaction and exchangeability reports.
//! - [`verifier`]: Monte Carlo scenarios checked against the exact oracles.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod graph;
pub mod rng;
pub mod scm;
pub mod verifier;

pub use data::{CompositeDataset, CompositeRow, SamplingDesign};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, Estimand, EstimatorConfig, EstimatorKind};
pub use glm::{DesignSpec, Family, GlmFit, ModelSpec};
pub use graph::{CausalGraph, InterventionSet, SwigGraph};
pub use scm::{PotentialOutcomeDataset, ScmSpec, TrueEstimands};
pub use verifier::{ScenarioSpec, VerificationReport};
