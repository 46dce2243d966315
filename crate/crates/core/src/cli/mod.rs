//! Command-line front end: run configuration, dataset files, the five
//! commands, budget sweeps and trace rendering.

mod commands;
mod config;
mod data;
mod render;
mod sweep;

use std::path::PathBuf;

use clap::Parser;

pub use commands::{run, EvalRecord, GENEROUS};
pub use config::{parse_config, Command, DatasetSpec, ModeKind, Overrides, RunConfig, SweepAxis, SweepSpec, VariantArg};
pub use data::{load_dataset, read_dataset, write_dataset};
pub use render::{render_trace, show_trace};
pub use sweep::{run_sweep, write_frontier_csv, FrontierRow};

/// Budgeted multi-agent context construction over knowledge graphs.
#[derive(Debug, Parser)]
#[command(name = "clause", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl Cli {
    pub fn into_config(self) -> crate::Result<RunConfig> {
        parse_config(self.config.as_deref(), self.command, &self.overrides)
    }
}
