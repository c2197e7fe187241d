use thiserror::Error;

use crate::solver::SolveReport;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum OhmError {
    /// A point, edge or box outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric argument outside its admissible range.
    #[error("range error: {what} = {value} not in [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Invalid configuration or parameters.
    #[error("invalid parameter: {0}")]
    Invalid(String),

    /// A precondition on the input data did not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The conjugate gradient iteration hit its cap.
    #[error("solver did not converge: {report}")]
    SolverFailed { report: SolveReport },

    /// A numerical cross-check disagreed beyond tolerance.
    #[error("numerical check failed: {0}")]
    CheckFailed(String),

    /// The operation declined to run on this input.
    #[error("refused: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OhmError {
    /// True for failures of the numerics, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, OhmError::SolverFailed { .. } | OhmError::CheckFailed(_))
    }
}

pub type Result<T> = std::result::Result<T, OhmError>;
