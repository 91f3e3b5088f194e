//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value. `key` names the offending field.
    #[error("config error: {key}: {message}")]
    Config { key: String, message: String },

    /// Corpus ingestion failure tied to a manifest row (1-based file line).
    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// Operation called on input outside its domain.
    #[error("{0}")]
    InvalidInput(String),

    /// Checkpoint incompatible with the requested configuration.
    #[error("incompatible checkpoint: mismatched fields: {}", fields.join(", "))]
    IncompatibleCheckpoint { fields: Vec<String> },

    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {term}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Image {
        context: String,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors a caller caused by handing in a bad configuration,
    /// as opposed to runtime failures. The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
