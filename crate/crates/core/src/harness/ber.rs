//! Monte Carlo bit error rates.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentSpec;
use super::{q_function, trial_seed, wilson_interval};
use crate::bp_receiver::{detect, DetectorOptions};
use crate::density_evolution::{de_run, DeOptions, DeParams};
use crate::ensemble::{sample_coupled_with, to_factor_graph, SystemConfig};
use crate::system_model::{random_symbols, transmit_on_graph};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BerCount {
    pub iteration: usize,
    pub bit_errors: u64,
    pub bits: u64,
}

impl BerCount {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    /// 95% Wilson interval.
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.bit_errors, self.bits)
    }
}

/// Error counts of one SNR point, one entry per detector iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub sigma_n_sq: f64,
    /// Counted position; `None` counts every unknown symbol.
    pub position: Option<usize>,
    pub counts: Vec<BerCount>,
    /// `Q(sqrt(sir_t))` from density evolution at the same position(s);
    /// NaN for a noiseless channel.
    pub de_prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerResult {
    pub points: Vec<BerPoint>,
    pub trials: usize,
    pub wall_clock_secs: f64,
}

impl BerResult {
    /// CSV body; wall-clock data is left to the summary.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = ber_csv_writer(out)?;
        for p in &self.points {
            write_ber_rows(&mut w, p)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn ber_csv_writer<W: std::io::Write>(out: W) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr_db", "position", "iteration", "bit_errors", "bits", "ber", "ci_low", "ci_high", "de_ber"])
        .map_err(crate::bp_receiver::csv_err)?;
    Ok(w)
}

pub(crate) fn write_ber_rows<W: std::io::Write>(w: &mut csv::Writer<W>, p: &BerPoint) -> Result<()> {
    let pos = p.position.map_or("all".to_string(), |i| i.to_string());
    for (c, de) in p.counts.iter().zip(&p.de_prediction) {
        let (lo, hi) = c.interval();
        w.write_record([
            p.snr_db.to_string(),
            pos.clone(),
            c.iteration.to_string(),
            c.bit_errors.to_string(),
            c.bits.to_string(),
            format!("{:.6e}", c.ber()),
            format!("{lo:.6e}"),
            format!("{hi:.6e}"),
            format!("{de:.6e}"),
        ])
        .map_err(crate::bp_receiver::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every SNR point of `spec`.
pub fn run_ber(spec: &ExperimentSpec) -> Result<BerResult> {
    run_ber_with(spec, |_| Ok(()))
}

/// Like [`run_ber`], handing each finished point to `on_point` before the
/// next one starts.
pub fn run_ber_with<F: FnMut(&BerPoint) -> Result<()>>(spec: &ExperimentSpec, mut on_point: F) -> Result<BerResult> {
    let start = Instant::now();
    let mut points = Vec::with_capacity(spec.snr_db.len());
    for (i, &snr_db) in spec.snr_db.iter().enumerate() {
        let cfg = spec.system(snr_db)?;
        let first_trial = (i * spec.trials) as u64;
        let point = ber_point(spec, &cfg, snr_db, first_trial)?;
        on_point(&point)?;
        points.push(point);
    }
    Ok(BerResult { points, trials: spec.trials, wall_clock_secs: start.elapsed().as_secs_f64() })
}

fn ber_point(spec: &ExperimentSpec, cfg: &SystemConfig, snr_db: f64, first_trial: u64) -> Result<BerPoint> {
    let position = spec.position.resolve(cfg.l);
    let options = DetectorOptions {
        iterations: spec.iterations,
        max_exact_degree: spec.max_exact_degree,
        ..Default::default()
    };
    let done = AtomicUsize::new(0);
    let stride = (spec.trials / 10).max(1);
    let zero = || vec![(0u64, 0u64); spec.iterations + 1];
    let totals = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let counts = ber_trial(cfg, spec, &options, position, trial_seed(spec.base_seed, first_trial + t));
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if d % stride == 0 {
                eprintln!("ber: snr {snr_db} dB, {d}/{} trials", spec.trials);
            }
            counts
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.0 += y.0;
                x.1 += y.1;
            }
            Ok(a)
        })?;
    let counts = totals
        .into_iter()
        .enumerate()
        .map(|(iteration, (bit_errors, bits))| BerCount { iteration, bit_errors, bits })
        .collect();
    Ok(BerPoint {
        snr_db,
        sigma_n_sq: cfg.sigma_n_sq,
        position,
        counts,
        de_prediction: de_prediction(cfg, position, spec.iterations)?,
    })
}

fn ber_trial(
    cfg: &SystemConfig,
    spec: &ExperimentSpec,
    options: &DetectorOptions,
    position: Option<usize>,
    seed: u64,
) -> Result<Vec<(u64, u64)>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let matrix = sample_coupled_with(cfg, &mut rng)?;
    let graph = to_factor_graph(&matrix);
    let symbols = random_symbols(cfg.total_symbols(), &mut rng);
    let block = transmit_on_graph(&graph, &symbols, cfg.sigma_n_sq, &mut rng)?;
    let report = detect(&graph, &block, spec.detector, options)?;
    Ok(report
        .records
        .iter()
        .map(|r| match position {
            Some(p) => (r.bit_errors[p], r.bits[p]),
            None => (r.bit_errors.iter().sum(), r.bits.iter().sum()),
        })
        .collect())
}

/// Large-sparse-system BER `Q(sqrt(sir_t))` for iterations `0..=iterations`.
pub fn de_prediction(cfg: &SystemConfig, position: Option<usize>, iterations: usize) -> Result<Vec<f64>> {
    if cfg.sigma_n_sq == 0.0 {
        return Ok(vec![f64::NAN; iterations + 1]);
    }
    let params = DeParams::from(cfg);
    let options = DeOptions { max_iters: iterations, tol: f64::MIN_POSITIVE, dump_every: 1, relaxation: 1.0 };
    let run = de_run(&params, &options)?;
    let ber_of = |sir: &[f64]| match position {
        Some(p) => q_function(sir[p].sqrt()),
        None => {
            let unknown: Vec<usize> = (0..cfg.l).filter(|&p| !cfg.is_known_position(p)).collect();
            unknown.iter().map(|&p| q_function(sir[p].sqrt())).sum::<f64>() / unknown.len() as f64
        }
    };
    let mut out: Vec<f64> = run.snapshots.iter().map(|s| ber_of(&s.sir)).collect();
    // An exact DE fixed point stops early; it stays put afterwards.
    let last = *out.last().expect("trajectory has the initial state");
    out.resize(iterations + 1, last);
    Ok(out)
}
