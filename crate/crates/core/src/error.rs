use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("ground truth has no valid pixels")]
    EmptyGroundTruth,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("incomplete tape: {0}")]
    Tape(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Range(_) => "range",
            Error::Integrity(_) => "integrity",
            Error::EmptyGroundTruth => "empty_ground_truth",
            Error::EmptyDataset => "empty_dataset",
            Error::Format { .. } => "format",
            Error::Tape(_) => "tape",
            Error::Diverged(_) => "diverged",
            Error::Io(_) => "io",
        }
    }
}
