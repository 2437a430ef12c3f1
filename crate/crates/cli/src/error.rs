use std::fmt;

use crate::config::ParseError;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or names. Exit code 1.
    Usage(String),
    /// Missing or malformed files, unwritable directories. Exit code 2.
    Data(String),
    /// Training diverged. Exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hclnet::Error> for CliError {
    fn from(e: hclnet::Error) -> Self {
        use hclnet::Error as E;
        match e {
            E::NumericFailure(_) | E::NonFinite(_) => Self::Numeric(e.to_string()),
            E::InvalidConfig { .. } | E::InvalidArgument(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        Self::Usage(format!("config {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
