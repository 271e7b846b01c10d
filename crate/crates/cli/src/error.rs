use std::fmt;
use std::path::Path;

use bdsde_filter::FilterError;

/// Failure classes of the command line, each with a fixed exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
    /// Names of the acceptance gates that failed.
    Gate(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
            CliError::Gate(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Gate(g) => write!(f, "acceptance gates failed: {}", g.join(", ")),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Io(io) => CliError::Io(io.to_string()),
            FilterError::InvalidModel(_)
            | FilterError::InvalidArgument(_)
            | FilterError::InvalidSpaceGrid(_)
            | FilterError::InvalidTimeGrid(_)
            | FilterError::QuadratureRange(_)
            | FilterError::NotDivisible { .. } => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
