use std::fmt;
use std::process::ExitCode;

use beliefrl_core::Error as CoreError;

/// Failure of a subcommand, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: config, flags or data files. Exit status 1.
    Validation {
        field: Option<String>,
        message: String,
    },
    /// Anything that went wrong while running a valid request. Exit status 2.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        CliError::Validation {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(err.into())
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Validation { field, .. } => field.as_deref(),
            CliError::Runtime(_) => None,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation { .. } => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }

    /// Prefixes runtime errors with where they happened.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Runtime(e) => CliError::Runtime(e.context(what.to_string())),
            other => other,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation {
                field: Some(field),
                message,
            } => write!(f, "invalid {field}: {message}"),
            CliError::Validation {
                field: None,
                message,
            } => write!(f, "invalid input: {message}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidArgument { name, reason } => {
                CliError::validation(name, reason.clone())
            }
            CoreError::InvalidMdp(_)
            | CoreError::InvalidPolicy(_)
            | CoreError::InvalidSegment(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::MalformedPair(_)
            | CoreError::EnumerationTooLarge(_)
            | CoreError::Stats(_)
            | CoreError::Csv { .. }
            | CoreError::Json(_) => CliError::Validation {
                field: None,
                message: e.to_string(),
            },
            _ => CliError::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
