use thiserror::Error;

/// Errors raised by model construction, integration and bound evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite integrand value ({0})")]
    NonFinite(String),

    #[error("zero evidence at y = {y}")]
    ZeroEvidence { y: f64 },

    #[error("model does not support ancestral sampling")]
    UnsupportedSampling,

    #[error("zero condition violated: max |E[psi|y]| = {deviation:e} exceeds {tolerance:e}")]
    ConditionViolated { deviation: f64, tolerance: f64 },

    #[error("model is not regular: {0}")]
    NonRegular(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("every seed-grid point is degenerate")]
    AllDegenerate,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
