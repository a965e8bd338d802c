use std::path::PathBuf;

use crate::idx::IdxError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] qlif_core::Error),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("download of {url} failed after {attempts} attempts: {last}")]
    Download { url: String, attempts: u32, last: String },
    #[error("{file}: expected {expected} samples, found {actual}")]
    SampleCount { file: String, expected: usize, actual: usize },
    #[error("{path}: size {actual} bytes does not match manifest ({expected} bytes); moved to {quarantined}")]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64, quarantined: PathBuf },
    #[error("{path}: corrupt cache entry ({reason}); moved to {quarantined}")]
    Corrupt { path: PathBuf, reason: String, quarantined: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
