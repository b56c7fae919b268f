use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("record {id}: relation {relation} belongs to domain {expected}, not {found}")]
    InconsistentLabels {
        id: String,
        relation: String,
        expected: String,
        found: String,
    },

    #[error("layout width mismatch: expected {expected}, got {actual} ({detail})")]
    Width {
        expected: usize,
        actual: usize,
        detail: String,
    },

    #[error("non-finite gradient in parameter {name} at index {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: Box<crate::training::History>,
    },

    #[error("{artifact}: {message}")]
    Format { artifact: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(artifact: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            artifact: artifact.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the failure is caused by bad user input rather than by a
    /// problem that arose while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Diverged { .. } | Error::NonFiniteGradient { .. }
        )
    }
}
