//! `corrheston <experiment> --config <path> [--seed N] [--paths N] [--out path]`
//!
//! Errors print one JSON object on stderr, e.g.
//! `{"error":"config","message":"model.eta_grid is empty"}`, and exit with
//! status 2 for configuration problems and 1 for computation failures.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{config_error, Config};
use crate::experiments::{Experiment, ALL};
use crate::output::RunRecord;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "CORRHESTON_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind.as_str() {
            "config" | "usage" | "invalid_parameter" => 2,
            _ => 1,
        }
    }
}

impl From<corrheston::Error> for CliError {
    fn from(e: corrheston::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "corrheston", version, about = "Stochastic-correlation double Heston experiments")]
struct Args {
    /// Experiment name; see --list.
    experiment: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to $CORRHESTON_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// List experiments and exit.
    #[arg(long)]
    list: bool,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| config_error(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(args: Args) -> Result<(), CliError> {
    if args.list {
        for e in ALL {
            println!("{:<18} {}", e.name(), e.description());
        }
        return Ok(());
    }
    let name = args
        .experiment
        .ok_or_else(|| CliError::new("usage", "missing experiment name (see --list)"))?;
    let experiment =
        Experiment::parse(&name).ok_or_else(|| CliError::new("usage", format!("unknown experiment `{name}`")))?;
    let path = args.config.ok_or_else(|| CliError::new("usage", "--config <path> is required"))?;
    let mut cfg = Config::load(&path)?;
    if let Some(declared) = &cfg.experiment {
        if declared != &name {
            return Err(config_error(format!("config is for `{declared}`, not `{name}`")));
        }
    }
    cfg.experiment = Some(name.clone());
    if let Some(seed) = args.seed {
        cfg.mc.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.mc.paths = paths;
    }
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.csv")));
    cfg.output = Some(out.clone());

    let threads = match thread_count(args.threads)? {
        Some(0) => return Err(config_error("thread count must be >= 1")),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::new("io", e.to_string()))?;
            n
        }
        None => rayon::current_num_threads(),
    };

    let record = RunRecord::start(&name, &out, &cfg, threads)?;
    match experiment.run(&cfg, &out) {
        Ok(rows) => record.finish("ok", rows),
        Err(e) => {
            record.finish("failed", 0)?;
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            report(&CliError::new("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report(e: &CliError) {
    let line = serde_json::json!({ "error": e.kind, "message": e.message });
    eprintln!("{line}");
}
