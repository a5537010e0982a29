use fedunlearn_core::Error as CoreError;

/// Harness-level errors, mapped onto the CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Exit code 3.
    #[error("data error: {0}")]
    Data(String),

    /// Exit code 4.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Format(msg) => CliError::Data(format!("format error: {msg}")),
            CoreError::Io { path, source } => {
                CliError::Data(format!("i/o error at {}: {source}", path.display()))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
