//! Experiment configuration, seeded parallel Monte Carlo and result files.
//!
//! Every experiment writes CSV data plus a `<kind>_summary.json` with the
//! resolved config, seed, generator and git revision. Progress goes to stderr.
//!
//! Trial `i` of a run with base seed `s` draws everything from
//! `ChaCha20Rng::seed_from_u64(trial_seed(s, i))`, so results do not depend on
//! the thread count or on which worker ran which trial.

pub mod ber;
pub mod config;
pub mod runs;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

pub use ber::{run_ber, run_ber_with, BerCount, BerPoint, BerResult};
pub use config::{parse_key_values, ExperimentKind, ExperimentSpec, PositionChoice, ThresholdMode};
pub use runs::{
    run_continuum, run_de, run_table, run_thresholds, validate_llr, ContinuumResult, DeSweep, LlrRow, TableCell,
    ThresholdRow, ThresholdTable,
};

use crate::{Error, Result};

/// Generator identity recorded in every summary.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64)";

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`: `splitmix64(splitmix64(base) ^ index)`. Stable.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// 95% Wilson score interval for `errors` out of `n`.
pub fn wilson_interval(errors: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // The bounds touch 0 and 1 exactly at the extremes; avoid rounding residue.
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: Option<usize>, f: F) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        b = b.num_threads(t);
    }
    let pool = b.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// What an experiment left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// Set when a required computation did not converge; outputs are still
    /// written.
    pub failure: Option<String>,
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

pub fn git_revision() -> String {
    let here = Path::new(env!("CARGO_MANIFEST_DIR"));
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .current_dir(here)
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Runs `spec` and writes its CSV files and JSON summary into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let mut files = Vec::new();
    let mut failure = None;
    let results = match spec.kind {
        ExperimentKind::De => {
            let sweep = run_de(spec)?;
            sweep.write_csv(create(out_dir, "de.csv", &mut files)?)?;
            if !sweep.all_converged() {
                failure = Some("a DE run reached the iteration cap".to_string());
            }
            json!(sweep.runs.iter().map(|(s, _)| s).collect::<Vec<_>>())
        }
        ExperimentKind::Threshold => match spec.threshold_mode {
            ThresholdMode::Uncoupled => {
                let rows = run_thresholds(spec)?;
                runs::write_threshold_csv(&rows, create(out_dir, "thresholds.csv", &mut files)?)?;
                json!(rows)
            }
            ThresholdMode::Table => {
                let tables = run_table(spec)?;
                for t in &tables {
                    let name = format!("table_{}dB.csv", t.snr_db);
                    runs::write_table_csv(t, create(out_dir, &name, &mut files)?)?;
                }
                let failed: usize = tables.iter().map(ThresholdTable::failed_cells).sum();
                if failed > 0 {
                    failure = Some(format!("{failed} table cell(s) failed"));
                }
                json!(tables)
            }
        },
        ExperimentKind::Ber => {
            // Rows go out as soon as a point finishes, so an interrupted sweep
            // keeps its completed points.
            let mut w = ber::ber_csv_writer(create(out_dir, "ber.csv", &mut files)?)?;
            let result = run_ber_with(spec, |p| ber::write_ber_rows(&mut w, p))?;
            json!({ "trials": result.trials, "points": result.points })
        }
        ExperimentKind::Continuum => {
            let r = run_continuum(spec)?;
            r.write_sweep_csv(create(out_dir, "continuum_sweep.csv", &mut files)?)?;
            if !spec.gamma.is_empty() {
                r.write_profiles_csv(create(out_dir, "continuum_profiles.csv", &mut files)?)?;
            }
            json!({ "sweep": r.sweep, "profile_rows": r.profiles.len() })
        }
        ExperimentKind::ValidateLlr => {
            let rows = validate_llr(spec)?;
            runs::write_llr_csv(&rows, create(out_dir, "llr.csv", &mut files)?)?;
            json!(rows.iter().filter(|r| r.position.is_none()).collect::<Vec<_>>())
        }
    };
    let summary = json!({
        "kind": spec.kind.name(),
        "seed": spec.base_seed,
        "rng": RNG_NAME,
        "trial_seed": "splitmix64(splitmix64(seed) ^ trial_index)",
        "git_revision": git_revision(),
        "config": spec.echo(),
        "threads": rayon::current_num_threads(),
        "wall_clock_secs": start.elapsed().as_secs_f64(),
        "status": failure.as_deref().unwrap_or("ok"),
        "outputs": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "results": results,
    });
    let path = out_dir.join(format!("{}_summary.json", spec.kind.name()));
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &summary)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    files.push(path);
    Ok(RunOutcome { files, failure })
}

/// Process exit code for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::Parse(_)
        | Error::DomainError(_)
        | Error::DimensionMismatch { .. }
        | Error::ComplexityRefused { .. } => 2,
        Error::NotConverged(_) | Error::NotInRange { .. } | Error::MonostableRegime { .. } => 3,
        Error::Io(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        // Pinned so the derivation cannot drift between versions.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| trial_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
    }

    #[test]
    fn wilson_interval_brackets_the_estimate() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.036_995).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_832).abs() < 1e-5 && (hi - 0.596_168).abs() < 1e-5, "{lo} {hi}");
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-14);
        assert!((q_function(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-16);
    }
}
