use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("duplicate series: samples {first} and {second} are equal")]
    DuplicateSeries { first: usize, second: usize },
    #[error("degenerate bandwidth: all kernel weights vanished (h = {0})")]
    DegenerateBandwidth(f64),
    #[error("rank deficient: minimum singular value {lambda_min:e} of {what}")]
    RankDeficient { what: String, lambda_min: f64 },
    #[error("basis ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("divergence at {at}: {detail}")]
    Divergence { at: String, detail: String },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
