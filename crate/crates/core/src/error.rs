//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Caller supplied an invalid value (label out of range, empty text, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A timestamp lies outside the configured generation window.
    #[error("timestamp {t} h is outside [{t_min}, {t_max}]")]
    Range { t: f64, t_min: f64, t_max: f64 },

    /// Dataset content is missing or unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values showed up during optimization.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// Report invariants failed to hold.
    #[error("report invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 runtime/numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Image { .. } => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        }
    }
}
