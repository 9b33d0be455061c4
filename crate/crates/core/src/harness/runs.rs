//! Deterministic runners: DE sweeps, threshold tables, LLR validation and the
//! continuum limit.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentSpec;
use super::trial_seed;
use crate::bp_receiver::{detect, DetectorOptions, LlrStatistics, SumRule};
use crate::bp_receiver::csv_err;
use crate::continuum::{asymptotic_me, build_effective_potential, nonuniform_profiles_sampled, ProfileBranch};
use crate::density_evolution::{de_run, DeOptions, DeParams, DeTrajectory};
use crate::ensemble::{sample_coupled_with, to_factor_graph};
use crate::system_model::{random_symbols, transmit_on_graph};
use crate::threshold::{
    bp_threshold_uncoupled, coupled_bp_threshold_with, io_threshold, potential_threshold, CoupledSearch,
    ThresholdResult,
};
use crate::{noise_variance_from_db, Error, Result};

fn rec<W: Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    w.write_record(fields).map_err(csv_err)
}

// ---------------------------------------------------------------- DE

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeRunSummary {
    pub snr_db: f64,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub eta_middle: f64,
    pub eta_first: f64,
    pub eta_last: f64,
}

#[derive(Debug, Clone)]
pub struct DeSweep {
    pub runs: Vec<(DeRunSummary, DeTrajectory)>,
}

impl DeSweep {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|(s, _)| s.converged)
    }

    /// Columns `snr_db, beta, iteration, position, sir, eta` for every snapshot.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        rec(&mut w, &["snr_db", "beta", "iteration", "position", "sir", "eta"].map(String::from))?;
        for (s, t) in &self.runs {
            let sn = noise_variance_from_db(s.snr_db);
            for snap in &t.snapshots {
                for (p, &sir) in snap.sir.iter().enumerate() {
                    rec(
                        &mut w,
                        &[
                            s.snr_db.to_string(),
                            s.beta.to_string(),
                            snap.iteration.to_string(),
                            p.to_string(),
                            format!("{sir:.15e}"),
                            format!("{:.15e}", sn * sir),
                        ],
                    )?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One DE run per `(snr_db, beta)` from the uninformative start.
pub fn run_de(spec: &ExperimentSpec) -> Result<DeSweep> {
    let jobs: Vec<(f64, f64)> =
        spec.snr_db.iter().flat_map(|&s| spec.beta.iter().map(move |&b| (s, b))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(snr_db, beta)| {
            let sn = noise_variance_from_db(snr_db);
            let params = DeParams::new(beta, spec.beta_init, sn, spec.l, spec.w)?;
            let t = de_run(&params, &spec.de)?;
            let eta = t.eta(sn);
            eprintln!("de: snr {snr_db} dB, beta {beta}: {} iterations", t.final_state.iteration);
            let summary = DeRunSummary {
                snr_db,
                beta,
                iterations: t.final_state.iteration,
                converged: t.converged,
                residual: t.residual,
                eta_middle: eta[params.middle()],
                eta_first: eta[0],
                eta_last: eta[spec.l - 1],
            };
            Ok((summary, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeSweep { runs })
}

// ---------------------------------------------------------------- thresholds

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub snr_db: f64,
    pub kind: &'static str,
    pub beta_star: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub probes: usize,
}

fn threshold_row(kind: &'static str, r: &ThresholdResult) -> ThresholdRow {
    ThresholdRow {
        snr_db: r.snr_db,
        kind,
        beta_star: r.beta_star,
        bracket_lo: r.bracket.0,
        bracket_hi: r.bracket.1,
        probes: r.diagnostics.probes,
    }
}

/// Uncoupled BP, IO (free energy) and potential thresholds at every SNR.
pub fn run_thresholds(spec: &ExperimentSpec) -> Result<Vec<ThresholdRow>> {
    let rows = spec
        .snr_db
        .par_iter()
        .map(|&snr_db| {
            let sn = noise_variance_from_db(snr_db);
            Ok(vec![
                threshold_row("bp", &bp_threshold_uncoupled(sn, spec.tol_beta)?),
                threshold_row("io", &io_threshold(sn, spec.tol_beta)?),
                threshold_row("potential", &potential_threshold(sn, spec.tol_beta)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_threshold_csv<W: Write>(rows: &[ThresholdRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    rec(&mut w, &["snr_db", "threshold", "beta_star", "bracket_lo", "bracket_hi"].map(String::from))?;
    for r in rows {
        rec(
            &mut w,
            &[
                r.snr_db.to_string(),
                r.kind.to_string(),
                format!("{:.8}", r.beta_star),
                format!("{:.8}", r.bracket_lo),
                format!("{:.8}", r.bracket_hi),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableCell {
    pub l: usize,
    pub w: usize,
    pub beta_star: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub probes: usize,
    pub unconverged_probes: usize,
    pub error: Option<String>,
}

/// Coupled BP thresholds at one SNR; `cells[i][j]` is `(l_values[i], w_values[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdTable {
    pub snr_db: f64,
    pub beta_init: f64,
    pub l_values: Vec<usize>,
    pub w_values: Vec<usize>,
    pub cells: Vec<Vec<TableCell>>,
}

impl ThresholdTable {
    pub fn cell(&self, l: usize, w: usize) -> Option<&TableCell> {
        let i = self.l_values.iter().position(|&x| x == l)?;
        let j = self.w_values.iter().position(|&x| x == w)?;
        Some(&self.cells[i][j])
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.error.is_some()).count()
    }
}

/// Fans the coupled threshold search out over the `(L, W)` grid of each SNR.
/// `W = 0` cells hold the uncoupled BP threshold. A failing cell records its
/// error and the table is still produced.
pub fn run_table(spec: &ExperimentSpec) -> Result<Vec<ThresholdTable>> {
    let search = CoupledSearch {
        de: spec.de.clone(),
        eta_gap: spec.eta_gap,
        scan_step: spec.scan_step,
    };
    let mut tables = Vec::with_capacity(spec.snr_db.len());
    for &snr_db in &spec.snr_db {
        let sn = noise_variance_from_db(snr_db);
        let jobs: Vec<(usize, usize)> =
            spec.l_values.iter().flat_map(|&l| spec.w_values.iter().map(move |&w| (l, w))).collect();
        let flat: Vec<TableCell> = jobs
            .par_iter()
            .map(|&(l, w)| {
                let outcome = if w == 0 {
                    bp_threshold_uncoupled(sn, spec.tol_beta)
                } else {
                    coupled_bp_threshold_with(l, w, spec.beta_init, sn, spec.tol_beta, &search)
                };
                eprintln!("threshold: snr {snr_db} dB, L = {l}, W = {w} done");
                match outcome {
                    Ok(r) => TableCell {
                        l,
                        w,
                        beta_star: Some(r.beta_star),
                        bracket: Some(r.bracket),
                        probes: r.diagnostics.probes,
                        unconverged_probes: r.diagnostics.unconverged_probes,
                        error: None,
                    },
                    Err(e) => TableCell {
                        l,
                        w,
                        beta_star: None,
                        bracket: None,
                        probes: 0,
                        unconverged_probes: 0,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        let nw = spec.w_values.len();
        let cells = if nw == 0 {
            vec![Vec::new(); spec.l_values.len()]
        } else {
            flat.chunks(nw).map(<[TableCell]>::to_vec).collect()
        };
        tables.push(ThresholdTable {
            snr_db,
            beta_init: spec.beta_init,
            l_values: spec.l_values.clone(),
            w_values: spec.w_values.clone(),
            cells,
        });
    }
    Ok(tables)
}

/// Table layout: one row per `L`, one column per `W`; failed cells read `NA`.
pub fn write_table_csv<W: Write>(table: &ThresholdTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["L".to_string()];
    header.extend(table.w_values.iter().map(|w| format!("W={w}")));
    rec(&mut w, &header)?;
    for (l, row) in table.l_values.iter().zip(&table.cells) {
        let mut fields = vec![l.to_string()];
        fields.extend(row.iter().map(|c| c.beta_star.map_or("NA".to_string(), |b| format!("{b:.5}"))));
        rec(&mut w, &fields)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- LLR validation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlrRow {
    pub snr_db: f64,
    pub iteration: usize,
    /// `None` for the pool over all unknown positions.
    pub position: Option<usize>,
    pub count: u64,
    pub empirical_mean: f64,
    pub empirical_var: f64,
    pub predicted_mean: f64,
    pub predicted_var: f64,
    pub mean_rel_error: f64,
    pub var_rel_error: f64,
}

fn rel_error(x: f64, reference: f64) -> f64 {
    if x == reference {
        0.0
    } else {
        (x - reference).abs() / reference.abs()
    }
}

/// Pairs the measured conditional v2f LLR moments with the DE prediction
/// `N(2 sir_t, 4 sir_t)` per iteration and position. Each trial draws its own
/// matrix, symbols and noise.
pub fn validate_llr(spec: &ExperimentSpec) -> Result<Vec<LlrRow>> {
    let mut rows = Vec::new();
    for (i, &snr_db) in spec.snr_db.iter().enumerate() {
        let cfg = spec.system(snr_db)?;
        let options = DetectorOptions {
            iterations: spec.iterations,
            collect_llr_stats: true,
            max_exact_degree: spec.max_exact_degree,
            ..Default::default()
        };
        let first = (i * spec.trials) as u64;
        let per_trial = (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha20Rng::seed_from_u64(trial_seed(spec.base_seed, first + t));
                let graph = to_factor_graph(&sample_coupled_with(&cfg, &mut rng)?);
                let symbols = random_symbols(cfg.total_symbols(), &mut rng);
                let block = transmit_on_graph(&graph, &symbols, cfg.sigma_n_sq, &mut rng)?;
                let report = detect(&graph, &block, SumRule::Gaussian, &options)?;
                Ok(LlrStatistics { moments: report.records.into_iter().map(|r| r.llr).collect() })
            })
            .collect::<Result<Vec<_>>>()?;
        // Merge in trial order so float sums do not depend on the schedule.
        let mut stats = LlrStatistics { moments: Vec::new() };
        for s in &per_trial {
            stats.merge(s);
        }
        let params = DeParams::from(&cfg);
        let de = de_run(
            &params,
            &DeOptions { max_iters: spec.iterations, tol: f64::MIN_POSITIVE, dump_every: 1, relaxation: 1.0 },
        )?;
        for (it, moments) in stats.moments.iter().enumerate() {
            let sir = &de.snapshots[it.min(de.snapshots.len() - 1)].sir;
            let mut pooled = crate::bp_receiver::LlrMoments::default();
            let mut weighted_sir = 0.0;
            for (p, m) in moments.iter().enumerate() {
                if m.count == 0 {
                    continue;
                }
                pooled.merge(m);
                weighted_sir += sir[p] * m.count as f64;
                rows.push(llr_row(snr_db, it, Some(p), m, sir[p]));
            }
            if pooled.count > 0 {
                rows.push(llr_row(snr_db, it, None, &pooled, weighted_sir / pooled.count as f64));
            }
        }
    }
    Ok(rows)
}

fn llr_row(snr_db: f64, iteration: usize, position: Option<usize>, m: &crate::bp_receiver::LlrMoments, sir: f64) -> LlrRow {
    let (mean, var) = (m.mean(), m.variance());
    LlrRow {
        snr_db,
        iteration,
        position,
        count: m.count,
        empirical_mean: mean,
        empirical_var: var,
        predicted_mean: 2.0 * sir,
        predicted_var: 4.0 * sir,
        mean_rel_error: rel_error(mean, 2.0 * sir),
        var_rel_error: rel_error(var, 4.0 * sir),
    }
}

pub fn write_llr_csv<W: Write>(rows: &[LlrRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    rec(
        &mut w,
        &[
            "snr_db",
            "iteration",
            "position",
            "count",
            "empirical_mean",
            "empirical_var",
            "predicted_mean",
            "predicted_var",
            "mean_rel_error",
            "var_rel_error",
        ]
        .map(String::from),
    )?;
    for r in rows {
        rec(
            &mut w,
            &[
                r.snr_db.to_string(),
                r.iteration.to_string(),
                r.position.map_or("pooled".to_string(), |p| p.to_string()),
                r.count.to_string(),
                format!("{:.10e}", r.empirical_mean),
                format!("{:.10e}", r.empirical_var),
                format!("{:.10e}", r.predicted_mean),
                format!("{:.10e}", r.predicted_var),
                format!("{:.6e}", r.mean_rel_error),
                format!("{:.6e}", r.var_rel_error),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- continuum

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub snr_db: f64,
    pub gamma: f64,
    pub branch: &'static str,
    pub resolved: bool,
    pub x: f64,
    pub u_tilde: f64,
    pub u: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuumResult {
    /// `(snr_db, beta, eta_asym)`.
    pub sweep: Vec<(f64, f64, f64)>,
    pub profiles: Vec<ProfileRow>,
}

/// Asymptotic efficiency over the load sweep and, for each `gamma`, the
/// stationary profiles at `profile_beta`.
pub fn run_continuum(spec: &ExperimentSpec) -> Result<ContinuumResult> {
    let betas = spec.beta_sweep();
    let mut sweep = Vec::new();
    let mut profiles = Vec::new();
    for &snr_db in &spec.snr_db {
        let sn = noise_variance_from_db(snr_db);
        let etas = betas.par_iter().map(|&b| asymptotic_me(b, sn)).collect::<Result<Vec<_>>>()?;
        sweep.extend(betas.iter().zip(etas).map(|(&b, e)| (snr_db, b, e)));
        if spec.gamma.is_empty() {
            continue;
        }
        let ep = match build_effective_potential(spec.profile_beta, sn) {
            Ok(ep) => Some(ep),
            Err(Error::MonostableRegime { .. }) => None,
            Err(e) => return Err(e),
        };
        let per_gamma = spec
            .gamma
            .par_iter()
            .map(|&g| nonuniform_profiles_sampled(g, spec.profile_beta, sn, spec.profile_samples))
            .collect::<Result<Vec<_>>>()?;
        for (&gamma, list) in spec.gamma.iter().zip(per_gamma) {
            for prof in list {
                let branch = match prof.branch {
                    ProfileBranch::Uniform => "uniform",
                    ProfileBranch::Trapped => "trapped",
                    ProfileBranch::Separatrix => "separatrix",
                };
                let (u, eta) = match &ep {
                    Some(ep) => (prof.u(ep), prof.eta(ep)),
                    None => (vec![f64::NAN; prof.x.len()], vec![f64::NAN; prof.x.len()]),
                };
                for i in 0..prof.x.len() {
                    profiles.push(ProfileRow {
                        snr_db,
                        gamma,
                        branch,
                        resolved: prof.resolved,
                        x: prof.x[i],
                        u_tilde: prof.u_tilde[i],
                        u: u[i],
                        eta: eta[i],
                    });
                }
            }
        }
    }
    Ok(ContinuumResult { sweep, profiles })
}

impl ContinuumResult {
    pub fn write_sweep_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        rec(&mut w, &["snr_db", "beta", "eta_asym"].map(String::from))?;
        for &(s, b, e) in &self.sweep {
            rec(&mut w, &[s.to_string(), format!("{b:.10}"), format!("{e:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_profiles_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        rec(&mut w, &["snr_db", "gamma", "branch", "resolved", "x", "u_tilde", "u", "eta"].map(String::from))?;
        for p in &self.profiles {
            rec(
                &mut w,
                &[
                    p.snr_db.to_string(),
                    p.gamma.to_string(),
                    p.branch.to_string(),
                    p.resolved.to_string(),
                    format!("{:.10}", p.x),
                    format!("{:.12e}", p.u_tilde),
                    format!("{:.12e}", p.u),
                    format!("{:.12e}", p.eta),
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
