//! Command-line harness for the radletter pipeline: single-report commands,
//! the full reflection loop, a zero-shot baseline and corpus evaluation.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::Cli;
pub use commands::run;
