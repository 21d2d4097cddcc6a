use std::path::PathBuf;

use crate::dataset::DatasetError;
use crate::detector::DetectError;
use crate::metrics::MetricsError;
use crate::nli::NliError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, wrapping each module's error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Nli(#[from] NliError),

    #[error(transparent)]
    Detect(#[from] DetectError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
