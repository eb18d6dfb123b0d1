use std::fmt;

use mimik::MimikError;

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration.
    Schema(String),
    /// A numeric precondition inside the library.
    Numeric(MimikError),
    /// The copula fit stopped before its step tolerance; artifacts were written.
    NotConverged { iterations: usize, objective: f64 },
    /// Reading inputs or writing artifacts failed.
    Io(String),
}

impl CliError {
    pub fn schema(msg: impl Into<String>) -> Self {
        CliError::Schema(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Io(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::NotConverged { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Numeric(e) => write!(f, "numeric error: {e}"),
            CliError::NotConverged { iterations, objective } => write!(
                f,
                "fit did not converge after {iterations} sweeps (objective {objective:e}); artifacts written"
            ),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<MimikError> for CliError {
    fn from(e: MimikError) -> Self {
        match e {
            MimikError::Io(m) => CliError::Io(m),
            other => CliError::Numeric(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
