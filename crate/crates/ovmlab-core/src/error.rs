use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors surfaced by the environment, model, search and experiment layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("path is already complete")]
    CompletePath,

    #[error("path is not complete")]
    IncompletePath,

    #[error("illegal step: {0}")]
    IllegalStep(String),

    #[error("training set is empty")]
    EmptyDataset,

    #[error("samples carry no step labels")]
    MissingStepLabels,

    #[error("no answered paths to vote over")]
    NoAnsweredPaths,

    #[error("prefix not found in samples: {0}")]
    PrefixNotFound(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("model file version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
