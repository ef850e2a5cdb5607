use thiserror::Error;

use crate::inverse::OuterTrace;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("density is not positive (min {min:e} at node {node})")]
    NonPositiveDensity { min: f64, node: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("step size fell below floor {floor:e} at step {step}")]
    StepFloor { step: usize, floor: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("inner solver did not converge (residual {residual:e} after {iterations} iterations)")]
    InnerNotConverged { residual: f64, iterations: usize },

    #[error("kernel matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("outer iteration {iteration} aborted: {source}")]
    OuterAborted {
        iteration: usize,
        trace: Box<OuterTrace>,
        #[source]
        source: Box<MfgError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, MfgError>;

pub(crate) fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(MfgError::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}
