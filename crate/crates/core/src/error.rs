use std::path::PathBuf;

/// Errors produced by the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("unknown backend '{name}' for '{kind}' (known: {known})")]
    UnknownBackend {
        kind: String,
        name: String,
        known: String,
    },

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("missing prerequisite artifact for stage '{stage}': {detail}")]
    MissingArtifact { stage: String, detail: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}
