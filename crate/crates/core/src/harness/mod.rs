//! Run configuration, run directories and the subcommands behind the CLI.

pub mod artifacts;
mod commands;
mod config;

pub use commands::{eval, gradcheck, train, verify, GroupCheck, VerifyReport, LEMMA_PAIRS};
pub use config::{apply_set, load_config, parse_config, parse_truncation, AblationConfig, ConfigError, HierarchyConfig, RunConfig};
