//! Batch front end: configuration, pricing runs, convergence studies and
//! property suites, each writing plain files into an output directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;
pub mod report;
pub mod study;
pub mod suites;

use std::fmt;

use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitCode {
    Ok,
    PropertyFailure,
    ConfigOrIo,
    /// Convergence-trend violations and solver breakdowns.
    TrendFailure,
    Usage,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        match self {
            ExitCode::Ok => 0,
            ExitCode::PropertyFailure => 1,
            ExitCode::ConfigOrIo => 2,
            ExitCode::TrendFailure => 3,
            ExitCode::Usage => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitCode::ConfigOrIo, message)
    }

    pub fn io(context: &str, e: impl fmt::Display) -> Self {
        Self::new(ExitCode::ConfigOrIo, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hjm_core::Error> for CliError {
    fn from(e: hjm_core::Error) -> Self {
        use hjm_core::Error as E;
        let code = match e {
            E::Solver { .. } | E::Assembly(_) | E::Extrapolation(_) => ExitCode::TrendFailure,
            _ => ExitCode::ConfigOrIo,
        };
        CliError::new(code, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let codes: Vec<i32> = [
            ExitCode::Ok,
            ExitCode::PropertyFailure,
            ExitCode::ConfigOrIo,
            ExitCode::TrendFailure,
            ExitCode::Usage,
        ]
        .iter()
        .map(|c| c.code())
        .collect();
        assert_eq!(codes, [0, 1, 2, 3, 64]);
    }

    #[test]
    fn core_errors_map_to_codes() {
        let solver = hjm_core::Error::Solver { step: 3, iterations: 10, residual: 1.0 };
        assert_eq!(CliError::from(solver).code, ExitCode::TrendFailure);
        assert_eq!(CliError::from(hjm_core::Error::Config("x".into())).code, ExitCode::ConfigOrIo);
    }
}
