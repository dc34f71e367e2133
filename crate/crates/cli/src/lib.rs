//! Experiment runner for impulse-control learners: configuration,
//! training, exact oracles, parameter sweeps and verification suites.

pub mod commands;
pub mod config;
pub mod output;
pub mod run;
pub mod suites;

use std::fmt;

/// A failed command. Configuration problems exit with 2, everything else
/// with 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<impulse_core::Error> for Failure {
    fn from(e: impulse_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}
