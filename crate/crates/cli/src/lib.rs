//! Command-line layer over the out-tree likelihood library: CSV ingestion,
//! run configuration, baselines, experiment harnesses and plot data.

pub mod baselines;
pub mod commands;
pub mod config;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod plotdata;
pub mod spiral;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
