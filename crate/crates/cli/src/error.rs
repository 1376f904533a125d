use std::process::ExitCode;

use dualspace::{Error, ErrorKind};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::of(ErrorKind::Validation, message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::of(ErrorKind::Numerical, message.into())
    }

    fn of(kind: ErrorKind, message: String) -> Self {
        let (kind, code) = match kind {
            ErrorKind::Validation => ("validation", 2),
            ErrorKind::Numerical => ("numerical", 3),
            ErrorKind::Io => ("io", 4),
        };
        Self {
            kind,
            message,
            code,
        }
    }

    /// Prints `{"error": {...}}` on stderr and returns the matching exit code.
    pub fn report(&self) -> ExitCode {
        let body = serde_json::json!({ "error": self });
        eprintln!("{body}");
        ExitCode::from(self.code)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::of(e.kind(), e.to_string())
    }
}
