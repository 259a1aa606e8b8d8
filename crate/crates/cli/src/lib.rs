//! Command-line front end: CSV ingestion, configuration, and the
//! `simulate`, `estimate` and `bootstrap` workflows.
//!
//! Exit codes: 0 success, 2 schema, configuration or usage error, 3
//! estimation failure, 4 failure budget exceeded.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{run, run_with};
pub use config::AnalysisConfig;
pub use error::{CliError, ErrorKind};
