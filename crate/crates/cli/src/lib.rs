//! Configuration, orchestration and export layer of the `fwspde` binary.

pub mod config;
pub mod error;
pub mod export;
pub mod run;

pub use config::{emit_config, load_config, parse_config, CommandKind, ExperimentConfig};
pub use error::CliError;
pub use run::{run, RunManifest, RunOptions, RunOutcome};
