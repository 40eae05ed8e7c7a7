use hjreg::ErrorClass;
use thiserror::Error;

/// Failures of an experiment run, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hjreg::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// `config`, `solver` or `violation`.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Io(_) => "config",
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => "config",
                ErrorClass::Solver => "solver",
                ErrorClass::Violation => "violation",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "solver" => 3,
            "violation" => 4,
            _ => 2,
        }
    }
}
