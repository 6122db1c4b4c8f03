use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("constraint system is singular")]
    SingularConstraint,

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("distance is infinite at phi = 1 for a rank-deficient structure")]
    InfiniteDistance,

    #[error("Newton iteration did not converge after {iterations} iterations (last increment {last_increment:e})")]
    NonConvergence { iterations: usize, last_increment: f64 },

    #[error("hyperparameter grid is empty")]
    EmptyGrid,

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical routines, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::SingularConstraint
                | Error::InfiniteDistance
                | Error::NonConvergence { .. }
                | Error::EmptyGrid
                | Error::Eigen(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
