use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite gradient in `{name}` at optimizer step {step}")]
    NonFiniteGradient { name: String, step: u64 },

    #[error("non-finite loss at transition {index}: {detail}")]
    NonFiniteLoss { index: usize, detail: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate positive rate for behavior `{behavior}`: {rate}")]
    DegenerateRate { behavior: String, rate: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("not ready: {0}")]
    NotReady(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
