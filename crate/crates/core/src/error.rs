use thiserror::Error;

/// Errors produced anywhere in the simulation and validation pipeline.
///
/// The variants map onto the CLI exit codes: `Resource` exits with 3,
/// everything else that stems from bad input exits with 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid program: {0}")]
    Program(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("unsupported hypothesis: {0}")]
    Unsupported(String),

    #[error("certificate key `{key}`: {reason}")]
    Ingestion { key: String, reason: String },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingestion(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by exceeding a size or runtime limit.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::Resource(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
