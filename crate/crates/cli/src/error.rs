use thiserror::Error;

/// Failure of a command, grouped by stage. Each group has its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("ingestion: {0}")]
    Ingestion(String),
    #[error("training: {0}")]
    Training(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Training(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<hsbench::eval::EvalError> for CliError {
    fn from(e: hsbench::eval::EvalError) -> Self {
        match e {
            hsbench::eval::EvalError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Training(other.to_string()),
        }
    }
}
