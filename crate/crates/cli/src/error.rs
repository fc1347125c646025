use std::fmt;

/// Command failure, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Rejected input record (exit 2).
    Validation(String),
    /// Bad or missing configuration, scenario or arguments (exit 2).
    Config(String),
    /// No peer reachable; local data is untouched (exit 3).
    Offline(String),
    /// A tier service could not start or run (exit 4).
    Service(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Config(_) => 2,
            CliError::Offline(_) => 3,
            CliError::Service(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Offline(m) => write!(f, "offline: data cached locally\n{m}"),
            CliError::Service(m) => write!(f, "service error: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<fieldsync_service::storage::StoreError> for CliError {
    fn from(e: fieldsync_service::storage::StoreError) -> Self {
        CliError::Other(e.into())
    }
}
