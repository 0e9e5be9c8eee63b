use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A request failure with an HTTP status and a machine-readable reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub reason: &'static str,
    pub error: String,
}

impl ApiError {
    pub fn new(status: u16, reason: &'static str, error: impl Into<String>) -> Self {
        Self {
            status,
            reason,
            error: error.into(),
        }
    }

    pub fn bad_request(reason: &'static str, error: impl Into<String>) -> Self {
        Self::new(400, reason, error)
    }

    pub fn not_found(reason: &'static str, error: impl Into<String>) -> Self {
        Self::new(404, reason, error)
    }

    pub fn conflict(reason: &'static str, error: impl Into<String>) -> Self {
        Self::new(409, reason, error)
    }

    pub fn internal(e: impl fmt::Display) -> Self {
        Self::new(500, "internal", e.to_string())
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.error, self.reason)
    }
}

impl std::error::Error for ApiError {}

/// Command failure, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or arguments (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while running a valid command (exit code 2).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        if e.status == 400 {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}
