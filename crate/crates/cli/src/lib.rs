//! Command-line front end for `tramsurv`: dataset CSV ingestion, spec files,
//! and the fit / evaluate / sample / ensemble workflows.

pub mod config;
pub mod csv_io;
pub mod error;
pub mod run;

pub use error::{CliError, CliResult};
pub use run::{run, Cli, Command};
