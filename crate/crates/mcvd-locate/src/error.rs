use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Aggregated configuration constraint violations.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("undefined reduction: baseline {metric} is zero")]
    UndefinedReduction { metric: String },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("unsupported layout version: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("malformed record at row {row}: {message}")]
    MalformedRecord { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e)),
            _ => Error::MalformedHeader(e.to_string()),
        }
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
