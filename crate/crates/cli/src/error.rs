use std::fmt;

use kervar_core::Error;

/// Failure category; each maps to a fixed process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Simulation,
    Solver,
    Resource,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Config, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Simulation => 3,
            Kind::Solver => 4,
            Kind::Resource => 5,
        }
    }

    /// Classifies a library error raised while simulating a chain.
    pub fn simulation(e: Error) -> Self {
        let kind = match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) | Error::Io(_) => {
                Kind::Config
            }
            _ => Kind::Simulation,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) | Error::Io(_) => {
                Kind::Config
            }
            Error::Diverged { .. } => Kind::Simulation,
            Error::Numerical(_) | Error::DegenerateKernel(_) => Kind::Solver,
            Error::Resource(_) => Kind::Resource,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
