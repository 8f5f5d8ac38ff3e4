//! `backlog`: simulate, estimate, train, optimize and validate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Failure;
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "backlog",
    version,
    about = "Claims processing backlogs under a shared capacity"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML experiment configuration; omitted keys take the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Capacity ratio, overriding the configured value or grid.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Simulation horizon or planning horizon `T`.
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Labeled sample paths and per-period backlog diagnostics.
    Simulate {
        /// Initial backlog: zero, stationary or a fixed count.
        #[arg(long)]
        start: Option<String>,
    },
    /// Monte Carlo tables of the expectation sequences.
    Estimate {
        #[arg(long, value_enum)]
        mode: Target,
    },
    /// Fit a sequence network and check it against Monte Carlo tables.
    Train {
        #[arg(long, value_enum)]
        mode: Target,
    },
    /// Minimize a capacity cost curve.
    Optimize {
        #[arg(long, value_enum)]
        mode: CostMode,
    },
    /// Run the acceptance suite.
    Validate {
        #[arg(long, value_enum, default_value = "full")]
        mode: Scale,
        /// Comma-separated criteria, default all.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        /// Negative control: corrupt one processing step.
        #[arg(long, hide = true)]
        corrupt_processing: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    G,
    GUncond,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostMode {
    Linear,
    Inflating,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Full,
    Reduced,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref()).map_err(Failure::Config)?;
    if let Some(dir) = &cli.common.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context::new(cfg, &cli.common)?;
    match cli.command {
        Command::Simulate { start } => commands::simulate(&ctx, start.as_deref()),
        Command::Estimate { mode } => commands::estimate(&ctx, mode),
        Command::Train { mode } => commands::train(&ctx, mode),
        Command::Optimize { mode } => commands::optimize(&ctx, mode),
        Command::Validate {
            mode,
            criteria,
            corrupt_processing,
        } => commands::validate(&ctx, mode, &criteria, corrupt_processing),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
