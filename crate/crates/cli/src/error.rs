use std::fmt;

use m3d_core::Error as CoreError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io(_)
            | CoreError::BadMagic { .. }
            | CoreError::Truncated(_)
            | CoreError::CountMismatch { .. }
            | CoreError::RecordLength { .. } => CliError::Io(msg),
            CoreError::NonFinite(_)
            | CoreError::NonFiniteLoss { .. }
            | CoreError::Diverged { .. }
            | CoreError::DegenerateBandwidth => CliError::Numeric(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Io(e.to_string())
    }
}
