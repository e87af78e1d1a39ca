use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated a precondition (wrong length, non-normalizable prior, bad order).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data failed validation (norm bounds, label range, predicate range).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Calibration found no verified coefficient, so nothing is released.
    #[error("release refused: {0}")]
    Refused(String),

    /// Quadrature did not reach the requested tolerance; the best estimate is attached.
    #[error("accuracy error: estimate {estimate} differs from refined value by {change} (tolerance {tolerance})")]
    Accuracy {
        estimate: f64,
        change: f64,
        tolerance: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used in experiment CSV error rows.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Usage(_) => "usage",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Refused(_) => "refused",
            Error::Accuracy { .. } => "accuracy",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
