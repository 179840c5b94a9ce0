use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    /// The input potential is not in the discrete continuation domain.
    #[error("not in discrete domain: fit residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    NotInDomain { residual: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
