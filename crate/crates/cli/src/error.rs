use std::process::ExitCode;

use attrsearch_core::Error as CoreError;

/// Exit statuses. Clap's own usage errors also exit with 2.
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INVALID: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    /// Malformed dataset, checkpoint or config file.
    Invalid(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Failed(_) => EXIT_FAILURE,
        })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Invalid(m) | CliError::Failed(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => CliError::Usage(e.to_string()),
            CoreError::Io { .. } => CliError::Io(e.to_string()),
            CoreError::Parse { .. } | CoreError::Checkpoint(_) | CoreError::NotFound { .. } => {
                CliError::Invalid(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
