//! Command-line front end: config parsing, subcommand dispatch and file
//! outputs for the `corrdrift` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{dispatch, main_with_args, Cli, Command, Outcome};
pub use config::{parse_config, FileConfig, ParametricConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use output::{Artifact, RunManifest};
