use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] ctc_slu::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use ctc_slu::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Core(E::Data(_) | E::Checkpoint(_)) => EXIT_DATA,
            CliError::Io(e) | CliError::Core(E::Io(e)) if e.kind() == io::ErrorKind::NotFound => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFY,
            _ => EXIT_OTHER,
        }
    }
}
