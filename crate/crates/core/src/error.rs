use std::path::PathBuf;

/// Errors raised by the toolkit. Variants mirror the error classes that the
/// command-line front end maps onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("undefined result: {0}")]
    Undefined(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("division domain error: {0}")]
    DivisionDomain(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("sample rejected: {0}")]
    Rejected(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed user input rather than runtime
    /// failures of an external service.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Transport(_) | Error::Rejected(_) | Error::Io { .. })
    }
}
