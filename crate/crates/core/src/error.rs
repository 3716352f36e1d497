use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular point: {0}")]
    Singularity(String),
    #[error("numerical consistency: {0}")]
    Consistency(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
