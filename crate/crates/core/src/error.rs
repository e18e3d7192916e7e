use thiserror::Error;

/// Errors produced by the covgroup library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("matrix is near-singular (min eigenvalue {min_eigenvalue:e}, floor {floor:e})")]
    NearSingular { min_eigenvalue: f64, floor: f64 },

    #[error("numeric range exceeded: {0}")]
    NumericRange(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Fréchet mean did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    Convergence { iterations: usize, gradient_norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bootstrap aborted: {failures} failed fits out of {attempts} attempts")]
    BootstrapFailures { failures: usize, attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
