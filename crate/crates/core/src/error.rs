use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("raster format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("bitstream header error: {0}")]
    Header(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("oracle timed out after {0:?}")]
    OracleTimeout(std::time::Duration),

    #[error("{count} regions exceed the exhaustive limit of {limit}; use the sampled estimator")]
    TooManyRegions { count: usize, limit: usize },

    #[error("threshold unachievable under profile (best achieved p_D = {best:.6})")]
    ThresholdUnachievable { best: f64 },

    #[error("normal-approximation bound unachievable: {0}")]
    Unachievable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
