use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("satellite and receiver positions coincide")]
    CoincidentPositions,
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("singular innovation covariance at epoch {0}")]
    SingularInnovation(usize),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("config schema violation: {0}")]
    ConfigSchema(String),
    #[error("inconsistent config: {0}")]
    ConfigInconsistent(String),
    #[error("measurement ingestion failed: {0}")]
    Ingest(String),
    #[error("solver did not converge after {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 configuration, 3 ingestion, 4 non-convergence,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse(_) | Error::ConfigSchema(_) | Error::ConfigInconsistent(_) => 2,
            Error::Ingest(_) => 3,
            Error::NotConverged(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                got,
            })
        }
    }
}
