use std::path::PathBuf;

/// Errors surfaced by the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation received arguments that violate its contract.
    #[error("{0}")]
    InvalidInput(String),

    /// A configuration file or run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A serialized artifact (model, features, manifest) is malformed.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Filesystem failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; carries the stage name and the cause.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }

    /// True for errors that should map to the config exit code (2) rather
    /// than a stage failure (3).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
