use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed file format: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("monotone likelihood: coefficient for column '{column}' diverges (perfect separation)")]
    Separation { column: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss (max |grad| = {max_grad})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        max_grad: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
