use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input file.
    #[error("{0}")]
    Config(String),
    /// Anything that went wrong while running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", what.display()))
    }
}

impl From<escalate_core::Error> for CliError {
    fn from(e: escalate_core::Error) -> Self {
        match e {
            escalate_core::Error::Invalid(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
