use thiserror::Error;

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("diagnostics failed: {0}")]
    Assertion(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Errors raised before any step is taken are validation errors.
pub(crate) fn invalid(e: wgflow::Error) -> CliError {
    CliError::Validation(e.to_string())
}
