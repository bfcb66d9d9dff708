//! `pamlab`: identity checks, oracle values and Monte Carlo experiments for
//! the parabolic Anderson model.
//!
//! Exit codes: 0 success, 1 failed verification, 2 bad configuration,
//! 3 numerical failure. `PAMLAB_WORKERS` sets the worker count.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::json;

use commands::{run, Failure};
use config::{parse, validate, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Deterministic identity suite.
    Verify,
    /// Closed-form variance values.
    Oracle,
    /// Paths of spatial averages.
    Simulate,
    /// Variance and normality sweep in N.
    Clt,
    /// Scaled covariance matrices across times.
    Fdd,
    /// L2 decay of spatial averages in N.
    Ergodic,
    /// Small-time roughness statistic.
    Local,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Verify => Subcommand::Verify,
            Command::Oracle => Subcommand::Oracle,
            Command::Simulate => Subcommand::Simulate,
            Command::Clt => Subcommand::Clt,
            Command::Fdd => Subcommand::Fdd,
            Command::Ergodic => Subcommand::Ergodic,
            Command::Local => Subcommand::Local,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pamlab",
    version,
    about = "Parabolic Anderson model oracles and Monte Carlo experiments"
)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(2)
}

fn set_workers() -> Result<(), String> {
    let Ok(v) = std::env::var("PAMLAB_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("PAMLAB_WORKERS: expected a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("PAMLAB_WORKERS: {e}"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = set_workers() {
        return config_error(e);
    }
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => return config_error(format!("cannot read {}: {e}", p.display())),
        },
        None => String::new(),
    };
    let mut cfg = match parse(&text) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let plan = match validate(cfg, args.command.into()) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    let start = Instant::now();
    let outcome = match run(&plan) {
        Ok(o) => o,
        Err(Failure::Config(m)) => return config_error(m),
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            return ExitCode::from(3);
        }
    };
    let manifest = json!({
        "subcommand": plan.sub,
        "config": plan.cfg,
        "seed": plan.seed,
        "versions": { "pamlab": env!("CARGO_PKG_VERSION") },
        "outputs": outcome.outputs.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "pass": outcome.pass,
        "summary": outcome.summary,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let path = plan.cfg.output_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(&path, text) {
        return config_error(format!("cannot write {}: {e}", path.display()));
    }
    match outcome.pass {
        Some(false) => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    }
}
