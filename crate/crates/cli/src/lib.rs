//! File formats, CSV output and subcommands behind the `nnparafac2` binary.

pub mod commands;
pub mod error;
pub mod format;
pub mod output;

pub use commands::{cmd_benchmark, cmd_decompose, cmd_simulate};
pub use error::{CliError, Result};
