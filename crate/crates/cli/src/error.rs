use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

impl From<dlcz::Error> for CliError {
    fn from(e: dlcz::Error) -> Self {
        match e {
            dlcz::Error::InvalidArgument { .. } => CliError::Config(e.to_string()),
            dlcz::Error::Infeasible(_) => CliError::Infeasible(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
