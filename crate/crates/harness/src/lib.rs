//! Command-line front end for netequil: loads a scenario from a TOML
//! config, runs the requested solvers and writes traces, tables and plots.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod plot;
pub mod scenario;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::Artifacts;
use crate::config::{ExperimentConfig, Overrides};

/// Bad input: names the offending config key, flag or file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError {
    pub path: String,
    pub message: String,
}

impl UsageError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_SOLVER_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "netequil",
    version,
    about = "Transportation network equilibrium solvers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for shortest-path sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for synthetic scenarios.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Relative accuracy.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Traffic assignment with fixed demand.
    Assign,
    /// Doubly constrained trip distribution over a γ sweep.
    Distribute,
    /// Combined distribution, mode choice and assignment.
    Combined,
    /// Gap-vs-iteration and gap-vs-time figures from trace files.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Version, cores and scenario dimensions.
    Info,
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, UsageError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| UsageError::new("--config", "required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides {
        threads: args.threads,
        out: args.out.clone(),
        seed: args.seed,
        max_iter: args.max_iter,
        eps: args.eps,
    });
    Ok(cfg)
}

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("usage error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, UsageError> {
    let report = match &cli.command {
        Command::Assign => commands::cmd_assign(&load(&cli.common)?)?,
        Command::Distribute => commands::cmd_distribute(&load(&cli.common)?)?,
        Command::Combined => commands::cmd_combined(&load(&cli.common)?)?,
        Command::Info => {
            let cfg = match &cli.common.config {
                Some(_) => Some(load(&cli.common)?),
                None => None,
            };
            print!("{}", commands::cmd_info(cfg.as_ref())?);
            return Ok(0);
        }
        Command::Plot { traces } => {
            cmd_plot(
                traces,
                cli.common
                    .out
                    .as_deref()
                    .unwrap_or(std::path::Path::new("out")),
            )?;
            return Ok(0);
        }
    };
    for row in &report.summary {
        let rel = row.gap / row.primal.abs();
        println!(
            "{:<28} {:<9} iters {:>6}  relative gap {rel:.3e}",
            row.solver, row.status, row.iterations
        );
    }
    println!("artifacts in {}", report.out.display());
    Ok(if report.failed.is_empty() {
        0
    } else {
        EXIT_SOLVER_FAILED
    })
}

/// Renders the figures and records them in the output manifest.
pub fn cmd_plot(traces: &[PathBuf], out: &std::path::Path) -> Result<Vec<PathBuf>, UsageError> {
    let series = traces
        .iter()
        .map(|p| plot::read_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let files = plot::render(&series, out)?;
    let inputs: Vec<String> = traces.iter().map(|p| p.display().to_string()).collect();
    let mut a = Artifacts::create(out, &format!("plot {}", inputs.join(" ")), "none")
        .map_err(|e| UsageError::new("--out", e.to_string()))?;
    for f in &files {
        if let Some(name) = f.file_name() {
            a.record(&name.to_string_lossy())
                .map_err(|e| UsageError::new("--out", e.to_string()))?;
        }
    }
    Ok(files)
}
