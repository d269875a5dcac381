use thiserror::Error;

pub type Result<T> = std::result::Result<T, RscmError>;

#[derive(Debug, Error)]
pub enum RscmError {
    #[error("invalid covariance structure: {0}")]
    InvalidStructure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("degenerate polynomial: {0}")]
    DegeneratePolynomial(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("covariance of class {class} is singular even after jitter")]
    SingularCovariance { class: String },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RscmError {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RscmError::NotPositiveDefinite(_)
                | RscmError::Estimation(_)
                | RscmError::DegeneratePolynomial(_)
                | RscmError::SingularCovariance { .. }
        )
    }
}
