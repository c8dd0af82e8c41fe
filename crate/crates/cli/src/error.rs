use patchflow_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, arguments or input schema (exit 2).
    #[error("{0}")]
    Usage(String),

    /// Failure while running (exit 3).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Any failure to read or validate the config is a usage error.
    pub fn config(path: &std::path::Path, e: Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse(_) | Error::InvalidArgument { .. } | Error::Schema(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
