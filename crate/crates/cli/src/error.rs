use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(perfcrd_core::Error),
}

impl From<perfcrd_core::Error> for CliError {
    fn from(e: perfcrd_core::Error) -> Self {
        use perfcrd_core::Error as E;
        match e {
            E::NonFinite { .. } | E::Diverged { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
