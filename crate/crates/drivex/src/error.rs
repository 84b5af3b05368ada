use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: schema error: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("{path}: unsupported version {found}, this build reads up to {supported}")]
    Version { path: PathBuf, found: u32, supported: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] drivex_core::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), reason: reason.into() }
    }

    pub(crate) fn schema(path: &Path, reason: impl Into<String>) -> Self {
        Error::Schema { path: path.to_path_buf(), reason: reason.into() }
    }
}
