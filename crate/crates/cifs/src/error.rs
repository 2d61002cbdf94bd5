use std::path::PathBuf;

use thiserror::Error;

/// Errors of the std layer. [`Error::exit_code`] gives the process status the
/// CLI reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Core(#[from] cifs_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage, 2 unreadable or malformed input, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use cifs_core::Error as C;
        match self {
            Error::Usage(_) | Error::Core(C::Config(_)) => 1,
            Error::Parse { .. } | Error::Io { .. } | Error::Core(C::Input(_)) => 2,
            Error::Core(C::Diverged(_)) | Error::Core(C::State(_)) => 3,
        }
    }
}
