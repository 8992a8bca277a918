//! Configuration-driven entry point: solve, verify, sweep and validate.

mod commands;
mod config;
mod registry;

pub use commands::{run_solve, run_sweep, run_validate, run_verify, Mode, SolveSummary, Suite, SweepRow};
pub use config::{
    parse_config, probe_points, BuiltProblem, CompareConfig, ConfigError, ConfigErrors, DriverConfig, EnvelopeConfig,
    FamilyConfig, GridConfig, MarksConfig, ProblemConfig, ScheduleConfig, TerminalConfig, UnboundedConfig, VerifyConfig,
};
pub use registry::{driver_by_name, terminal_by_name, RegistryError, DRIVER_NAMES, TERMINAL_NAMES};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ModeMismatch(_) => EXIT_CONFIG,
            Self::Solver(_) | Self::Io(_) => EXIT_SOLVER,
            Self::Hypothesis(_) => EXIT_HYPOTHESIS,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mbsdej", version, about = "Penalization solver and property checks for multivalued BSDEs with jumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for the solvers.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write the solution grid, reports and a summary.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mbsde")]
        mode: Mode,
    },
    /// Run a named check suite and write `verify.json`.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "core")]
        suite: Suite,
    },
    /// Penalized solves over a list of levels, written to `sweep.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated levels; defaults to the schedule.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u64>>,
    },
    /// Parse the config and run the assumption checks.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(paths) = common.paths {
        config.n_paths = paths;
    }
    Ok(config)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(w) = cli.workers {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Solve { common, mode } => load(common).and_then(|c| {
            let s = run_solve(&c, *mode, &common.out)?;
            println!("{}", s.line());
            Ok(EXIT_PASS)
        }),
        Command::Verify { common, suite } => load(common).and_then(|c| {
            let report = run_verify(&c, *suite, &common.out)?;
            for e in &report.entries {
                println!(
                    "{:<28} {} statistic={:.6e} tolerance={:.3e}",
                    e.check,
                    if e.pass { "PASS" } else { "FAIL" },
                    e.statistic,
                    e.tolerance
                );
            }
            Ok(if report.pass() { EXIT_PASS } else { EXIT_CHECK_FAILED })
        }),
        Command::Sweep { common, levels } => load(common).and_then(|c| {
            let rows = run_sweep(&c, levels.as_deref(), &common.out)?;
            for r in rows {
                println!("{:>8} {:.10}", r.level, r.y0);
            }
            Ok(EXIT_PASS)
        }),
        Command::Validate { common } => load(common).and_then(|c| {
            let report = run_validate(&c, Some(&common.out))?;
            for item in &report.items {
                println!("{:<26} {}", item.name, if item.pass { "ok" } else { "FAIL" });
            }
            Ok(if report.pass() { EXIT_PASS } else { EXIT_CONFIG })
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
