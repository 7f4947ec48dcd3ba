//! Library side of the `mrstd` command-line tool: configuration, CSV
//! ingestion, the subcommands and their output formats.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;

use std::fmt;

use mrstd_core::{Error, Violation};

pub use commands::{run, Cli, Command};

pub const EXIT_OK: i32 = 0;
/// Unreadable or invalid input, data or configuration.
pub const EXIT_INPUT: i32 = 2;
/// A model fit or the jackknife failed.
pub const EXIT_ESTIMATION: i32 = 3;
/// Too many simulation replicates failed.
pub const EXIT_ABORT: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl fmt::Display) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }

    /// One diagnostic per line.
    pub fn validation(violations: &[Violation]) -> Self {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Self { code: EXIT_INPUT, message: format!("input failed validation:\n{}", lines.join("\n")) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if let Error::Validation(v) = e.root() {
            return CliError::validation(v);
        }
        let code = match e.root() {
            Error::InvalidInput(_)
            | Error::Positivity { .. }
            | Error::UnknownStratum { .. }
            | Error::EmptyWeightedPopulation
            | Error::NegativeWeight { .. }
            | Error::OutcomeDomain(_)
            | Error::TooFewClusters { .. }
            | Error::Csv(_) => EXIT_INPUT,
            Error::SimulationAborted { .. } => EXIT_ABORT,
            _ => EXIT_ESTIMATION,
        };
        CliError { code, message: e.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_root() {
        let staged = |e: Error| Error::Stage { stage: "fit", source: Box::new(e) };
        assert_eq!(CliError::from(staged(Error::Positivity { index: 1, cluster_id: "a".into() })).code, EXIT_INPUT);
        assert_eq!(CliError::from(staged(Error::RankDeficient("x".into()))).code, EXIT_ESTIMATION);
        assert_eq!(CliError::from(Error::SimulationAborted { failures: 3, n_sim: 10 }).code, EXIT_ABORT);
        assert_eq!(CliError::from(Error::DegenerateJackknife).code, EXIT_ESTIMATION);
    }
}
