use std::io;
use std::path::{Path, PathBuf};

/// Errors raised by storage, configuration and the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A file does not follow its binary or JSON layout.
    #[error("{}: format error: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("{}: invalid JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    /// Bad command-line or configuration input; maps to exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] scmm_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, detail: impl Into<String>) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub(crate) fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
        move |source| Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Core(scmm_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
