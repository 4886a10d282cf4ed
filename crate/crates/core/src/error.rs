use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("inconsistent state: {0}")]
    InconsistentState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("utterance too short: {frames} input frames give no encoder output")]
    UtteranceTooShort { frames: usize },

    #[error("degenerate batch: every item is CTC-infeasible and the SLU weight is zero")]
    DegenerateBatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
