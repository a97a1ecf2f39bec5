use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or input values.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] interdiff_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Core(interdiff_core::Error::InvalidArgument(_)) => {
                ExitCode::from(2)
            }
            _ => ExitCode::from(1),
        }
    }
}
