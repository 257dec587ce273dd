use std::io;

use thiserror::Error;

/// Errors raised across the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient ensemble: {found} members, need at least {needed}")]
    InsufficientEnsemble { found: usize, needed: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "linear solver did not converge after {iterations} iterations \
         (relative residual {residual:.3e}, tolerance {tolerance:.1e}, step {step})"
    )]
    SolverNonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
        step: usize,
    },

    #[error("singular innovation covariance: {0}")]
    Singular(String),

    #[error("zero prior variance")]
    ZeroPriorVariance,

    #[error("forward simulation failed for member {member}: {source}")]
    MemberSimulation {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Other(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
