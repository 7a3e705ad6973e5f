//! File formats, verification checks and the command-line driver for
//! `kausal-core`.

pub mod checks;
pub mod cli;
pub mod error;
pub mod formats;
pub mod instances;
pub mod report;
pub mod suite;

pub use error::{CliError, CliResult};
