use std::path::PathBuf;

/// Errors surfaced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration or domain object violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called outside its contract (bad index, done session, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A value is outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A text input could not be parsed.
    #[error("{path}: {message} at line {line}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Training produced NaN or infinite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{}: {source}", path.display())]
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

    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Parse { .. } | Error::Usage(_) | Error::Domain(_)
        )
    }
}
