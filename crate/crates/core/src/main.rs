use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sc_scdma::harness::{self, config, ExperimentKind, ExperimentSpec};
use sc_scdma::{Error, Result};

#[derive(Parser)]
#[command(name = "sc-scdma", version, about = "Spatially-coupled sparse CDMA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled density evolution runs over loads and SNRs.
    De(Common),
    /// Uncoupled BP/IO/potential thresholds, or a coupled (L, W) table with `--set mode=table`.
    Threshold(Common),
    /// Monte Carlo bit error rates of BP detection.
    Ber(Common),
    /// Continuum-limit efficiency sweep and stationary profiles.
    Continuum(Common),
    /// Empirical v2f LLR moments against the density-evolution prediction.
    #[command(name = "validate-llr")]
    ValidateLlr(Common),
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build_spec(kind: ExperimentKind, c: &Common) -> Result<ExperimentSpec> {
    let mut map = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
            config::parse_key_values(&text)?
        }
        None => Default::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        config::check_key(k.trim())?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = c.seed {
        map.insert("seed".to_string(), seed.to_string());
    }
    ExperimentSpec::from_map(Some(kind), &map)
}

fn run(kind: ExperimentKind, c: &Common) -> Result<harness::RunOutcome> {
    let spec = build_spec(kind, c)?;
    harness::with_threads(c.threads, || harness::run_experiment(&spec, &c.out))?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::De(c) => (ExperimentKind::De, c),
        Command::Threshold(c) => (ExperimentKind::Threshold, c),
        Command::Ber(c) => (ExperimentKind::Ber, c),
        Command::Continuum(c) => (ExperimentKind::Continuum, c),
        Command::ValidateLlr(c) => (ExperimentKind::ValidateLlr, c),
    };
    match run(kind, common) {
        Ok(outcome) => {
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            match outcome.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(3)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e))
        }
    }
}
