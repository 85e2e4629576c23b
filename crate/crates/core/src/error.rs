use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped so the CLI can map them onto exit codes: configuration
/// problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual} ({context})")]
    LengthMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate group: {0}")]
    DegenerateGroup(String),

    #[error("numeric failure in {term}: {detail}")]
    NumericFailure { term: &'static str, detail: String },

    #[error("invalid SCM: {0}")]
    InvalidScm(String),

    #[error("state space too large: {vars} binary variables (limit {limit})")]
    StateSpaceTooLarge { vars: usize, limit: usize },

    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}, column {column}: {detail}")]
    Validation {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unsupported strata: {0}")]
    Unsupported(String),

    #[error("effect not identifiable: {0}")]
    Identification(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stale data: {0}")]
    Stale(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidScm(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NumericFailure { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
