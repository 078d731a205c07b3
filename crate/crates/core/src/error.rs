use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum BndlError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("non-finite gradient in parameter block `{block}` at index {index}")]
    NonFinite { block: &'static str, index: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BndlError {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            BndlError::Domain(_) => "domain",
            BndlError::Config(_) => "config",
            BndlError::Shape(_) => "shape",
            BndlError::Label(_) => "label",
            BndlError::NonFinite { .. } => "non_finite",
            BndlError::Format { .. } => "format",
            BndlError::Ingestion(_) => "ingestion",
            BndlError::Generation(_) => "generation",
            BndlError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BndlError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BndlError>;
