use std::fmt::Display;
use std::path::Path;

use serde_json::json;

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NOT_FUNCTIONAL: u8 = 2;
pub const EXIT_ORACLE: u8 = 3;
pub const EXIT_DISCREPANCY: u8 = 4;

/// One JSON object per line on stderr.
pub fn emit(level: &str, code: &str, message: &str) {
    eprintln!("{}", json!({ "level": level, "code": code, "message": message }));
}

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, exit: u8, message: impl Into<String>) -> Self {
        Self { code, exit, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new("malformed_input", EXIT_INPUT, message)
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        Self::new("io", EXIT_INPUT, format!("{}: {e}", path.display()))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
