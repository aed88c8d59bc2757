//! `monohjb` command-line front end.
//!
//! Every command reads one TOML config, writes its CSV payloads plus a
//! `report.toml` into the output directory and exits with
//! 0 (success), 1 (config or usage error), 2 (numerical failure) or 3 (I/O).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<monohjb::Error> for CliError {
    fn from(e: monohjb::Error) -> Self {
        use monohjb::Error as E;
        match e {
            E::NotConverged(_) | E::TrajectoryExit { .. } => CliError::Numerical(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "monohjb",
    version,
    about = "Discounted optimal control with monotone controls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration (a previous report.toml is accepted as well).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Round k to the nearest spacing that divides the domain.
    #[arg(long, global = true)]
    snap_k: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve the fixed-point problem and write nodal values and policy.
    Solve,
    /// Solve, then simulate the greedy closed loop from [simulate].x0, a0.
    Simulate,
    /// Convergence study over [sweep].k_list.
    Sweep,
    /// Check the mesh hypotheses for (k, h) and dump the mesh.
    CheckMesh,
    /// Compare the finite-horizon recursion against exhaustive search.
    OracleCheck,
    /// Evaluate the error-bound shapes for [bounds].horizon.
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::CheckMesh => "check-mesh",
            Command::OracleCheck => "oracle-check",
            Command::Bounds => "bounds",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.out.is_some() {
        cfg.out_dir = cli.out.clone();
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cli.snap_k {
        cfg.discretization.snap_k = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let cfg = load_config(cli)?;
    let spec = cfg.problem_spec()?;
    let cfg = cfg.resolve(&spec)?;
    let workers = cfg.workers.unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| commands::execute(cli.command, &cfg, &spec))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("monohjb {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
