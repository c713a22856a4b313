use thiserror::Error;

use crate::data::DataError;
use crate::diagnostics::DiagnosticsError;
use crate::estimators::EstimateError;
use crate::glm::GlmError;
use crate::graph::GraphError;
use crate::scm::{GenerateError, SpecError};
use crate::verifier::VerifyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
