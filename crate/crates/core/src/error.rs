use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("container format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no legal chunk for sequence length {len} (l_min={l_min}, l_max={l_max})")]
    ChunkRejected { len: usize, l_min: usize, l_max: usize },

    #[error("donor error: {0}")]
    Donor(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (batch seed {batch_seed:#018x}): loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        batch_seed: u64,
        loss: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Validation-class errors map to CLI exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Usage(_) | Error::Shape(_) | Error::Json(_)
        )
    }
}
