use thiserror::Error;

/// Errors produced by the separation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Hermitian eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("non-finite value produced during {stage}")]
    NonFinite { stage: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular(_)
                | Error::NoConvergence { .. }
                | Error::NonFinite { .. }
        )
    }

    pub(crate) fn non_finite(stage: impl Into<String>) -> Self {
        Error::NonFinite { stage: stage.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
