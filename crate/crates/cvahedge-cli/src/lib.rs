//! Library side of the command-line front end: scenario files and the mode
//! runners. The binary in `main.rs` is a thin argument-parsing wrapper.

pub mod run;
pub mod scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> std::process::ExitCode {
        match self {
            CliError::Config(_) => std::process::ExitCode::from(2),
            CliError::Numerical(_) => std::process::ExitCode::from(3),
        }
    }
}
