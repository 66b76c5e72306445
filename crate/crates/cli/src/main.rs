//! `splinelens` command-line driver.
//!
//! Exit codes: 0 success, 2 verification failure, 3 input error, 4 numerical
//! degeneracy.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Command, Config};

pub const OUT_ENV: &str = "SPLINELENS_OUT";
const DEFAULT_OUT_ROOT: &str = "splinelens-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] splinelens::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 4,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "splinelens", version, about = "Spline-partition experiments on batch-normalized networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trace per-layer partitions with and without batch normalization.
    Partition(Common),
    /// Run the verification battery.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check names.
        #[arg(long)]
        only: Option<String>,
    },
    /// Concentration maps and curves per initialization.
    Concentration(Common),
    /// Decision-boundary ensembles over mini-batch draws.
    Jitter(Common),
    /// Train with plain SGD.
    Train(Common),
    /// Mini-batch statistic distributions against the analytic variances.
    Stats(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $SPLINELENS_OUT/<command> or splinelens-out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn build(command: Command, common: &Common, extra: &[(&str, Option<&String>)]) -> Result<Config, CliError> {
    let mut cfg = Config::new(command);
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    for pair in &common.set {
        cfg.set(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.set(&format!("seed={seed}"))?;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(&format!("{key}={v}"))?;
        }
    }
    Ok(cfg)
}

fn out_dir(command: Command, common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
        root.join(command.name())
    })
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let (command, common, only) = match &cli.command {
        Cmd::Partition(c) => (Command::Partition, c, None),
        Cmd::Verify { common, only } => (Command::Verify, common, only.as_ref()),
        Cmd::Concentration(c) => (Command::Concentration, c, None),
        Cmd::Jitter(c) => (Command::Jitter, c, None),
        Cmd::Train(c) => (Command::Train, c, None),
        Cmd::Stats(c) => (Command::Stats, c, None),
    };
    let cfg = build(command, common, &[("verify.only", only)])?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start {n} threads: {e}")))?;
    }
    let out = out_dir(command, common);
    log::info!("writing {} output to {}", command.name(), out.display());
    commands::run(&cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
