use thiserror::Error;

/// Errors produced by the SC-SCDMA library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("exact BP refused: function-node degree {degree} exceeds the limit {limit}")]
    ComplexityRefused { degree: usize, limit: usize },

    #[error("argument outside the domain: {0}")]
    DomainError(String),

    #[error("no bistable window: the fixed-point equation has a unique root (beta = {beta}, sigma_n^2 = {sigma_n_sq})")]
    MonostableRegime { beta: f64, sigma_n_sq: f64 },

    #[error("threshold not found in the search range [{lo}, {hi}]")]
    NotInRange { lo: f64, hi: f64 },

    #[error("numerical procedure did not converge: {0}")]
    NotConverged(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
