//! Free energy, potential and load thresholds.
//!
//! * `free_energy` / `free_energy_alt`: the single-system free energy and its
//!   rewriting in terms of the MMSE; both agree at fixed points.
//! * `potential`: `V(u) = v u + 2 beta C(v) + ln(sigma_n^2 - u) - ln sigma_n^2`
//!   with `u = -beta xi(v)`, `u` in `[-beta, 0]`.
//! * Thresholds: the uncoupled BP threshold (onset of bistability), the IO
//!   threshold (equal free energy at the two stable fixed points) and coupled
//!   finite-`(L, W)` BP thresholds by bisection over density-evolution runs.

use std::f64::consts::LN_2;

use crate::density_evolution::{de_run, uncoupled_fixed_points, DeOptions, DeParams, FixedPointSet};
use crate::numeric::bisect;
use crate::scalar_mmse::MmseTable;
use crate::{snr_db_from_noise_variance, Error, Result};

/// `F(s) = beta C(s) + (sigma_n^2 s - ln(sigma_n^2 s) - 1)/2`.
pub fn free_energy(s: f64, beta: f64, sigma_n_sq: f64) -> f64 {
    let x = sigma_n_sq * s;
    beta * MmseTable::global().c(s) + 0.5 * (x - x.ln() - 1.0)
}

/// `F~(s) = beta C(s) + (ln((sigma_n^2 + beta xi(s))/sigma_n^2) - beta s xi(s))/2`.
pub fn free_energy_alt(s: f64, beta: f64, sigma_n_sq: f64) -> f64 {
    let t = MmseTable::global();
    let xi = t.xi(s);
    let sxi = if xi == 0.0 { 0.0 } else { s * xi };
    beta * t.c(s) + 0.5 * ((beta * xi / sigma_n_sq).ln_1p() - beta * sxi)
}

fn check_u(u: f64, beta: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::DomainError(format!("potential needs beta > 0, got {beta}")));
    }
    let x = -u / beta;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(format!("u = {u} outside [-beta, 0] for beta = {beta}")));
    }
    Ok(())
}

/// `v = xi^{-1}(-u/beta)`.
pub fn potential_argument(u: f64, beta: f64) -> Result<f64> {
    check_u(u, beta)?;
    Ok(MmseTable::global().xi_inverse(-u / beta))
}

/// Potential `V(u)` on `[-beta, 0]`.
pub fn potential(u: f64, beta: f64, sigma_n_sq: f64) -> Result<f64> {
    check_u(u, beta)?;
    if u == 0.0 {
        return Ok(2.0 * beta * LN_2);
    }
    let v = MmseTable::global().xi_inverse(-u / beta);
    let c = MmseTable::global().c(v);
    Ok(v * u + 2.0 * beta * c + (-u / sigma_n_sq).ln_1p())
}

/// `dV/du = v - 1/(sigma_n^2 - u)`.
pub fn potential_derivative(u: f64, beta: f64, sigma_n_sq: f64) -> Result<f64> {
    let v = potential_argument(u, beta)?;
    Ok(v - 1.0 / (sigma_n_sq - u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryKind {
    LeftStable,
    Unstable,
    RightStable,
}

/// Sampled potential with its stationary points.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialCurve {
    pub beta: f64,
    pub sigma_n_sq: f64,
    pub u: Vec<f64>,
    pub values: Vec<f64>,
    /// `(u, kind)` in increasing `u`.
    pub stationary: Vec<(f64, StationaryKind)>,
}

/// Stationary points of `V`, found from sign changes of `V'` on a grid in `u`
/// refined by bisection in `u`. Minima are tagged left/right, maxima unstable.
pub fn potential_stationary_points(beta: f64, sigma_n_sq: f64) -> Result<Vec<(f64, StationaryKind)>> {
    // The grid is uniform in ln(-u) so the region next to u = 0 is resolved.
    let table = MmseTable::global();
    let u_min = -beta;
    let u_max = -beta * table.xi(crate::scalar_mmse::SNR_SATURATION * 0.5).max(1e-300);
    let points = 20_000;
    let ratio = (u_min / u_max).ln();
    let grid: Vec<f64> = (0..points)
        .map(|i| if i == 0 { u_min } else { u_min * (-ratio * i as f64 / (points - 1) as f64).exp() })
        .collect();
    let d = |u: f64| potential_derivative(u, beta, sigma_n_sq).unwrap_or(f64::NAN);
    let mut found: Vec<f64> = Vec::new();
    let mut prev = d(grid[0]);
    for w in grid.windows(2) {
        let cur = d(w[1]);
        if (prev > 0.0) != (cur > 0.0) {
            let (a, b) = bisect(d, w[0], w[1], 1e-14 * w[0].abs());
            found.push(0.5 * (a + b));
        }
        prev = cur;
    }
    let mins: Vec<usize> = (0..found.len()).filter(|&i| i % 2 == 0).collect();
    Ok(found
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let kind = if i % 2 == 1 {
                StationaryKind::Unstable
            } else if mins.len() > 1 && i == 0 {
                StationaryKind::LeftStable
            } else {
                StationaryKind::RightStable
            };
            (u, kind)
        })
        .collect())
}

pub fn potential_curve(beta: f64, sigma_n_sq: f64, points: usize) -> Result<PotentialCurve> {
    if points < 2 {
        return Err(Error::InvalidConfig("potential curve needs at least 2 points".into()));
    }
    let u: Vec<f64> = (0..points).map(|i| -beta + beta * i as f64 / (points - 1) as f64).collect();
    let values = u.iter().map(|&x| potential(x, beta, sigma_n_sq)).collect::<Result<Vec<_>>>()?;
    let stationary = potential_stationary_points(beta, sigma_n_sq)?;
    Ok(PotentialCurve { beta, sigma_n_sq, u, values, stationary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    Bifurcation,
    EqualHeight,
    CoupledDeBisection,
}

impl ThresholdMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            ThresholdMethod::Bifurcation => "bifurcation",
            ThresholdMethod::EqualHeight => "equal-height",
            ThresholdMethod::CoupledDeBisection => "coupled-DE-bisection",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdDiagnostics {
    pub probes: usize,
    /// Total DE iterations (coupled searches only).
    pub de_iterations: usize,
    /// Probes whose DE run hit the iteration cap.
    pub unconverged_probes: usize,
    pub note: String,
}

/// A located critical load: `lo` is classified good, `hi` bad.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub beta_star: f64,
    pub bracket: (f64, f64),
    pub method: ThresholdMethod,
    pub snr_db: f64,
    pub diagnostics: ThresholdDiagnostics,
}

fn bisect_classifier<F: FnMut(f64) -> Result<bool>>(mut good: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64, usize)> {
    let mut probes = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if good(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi, probes))
}

fn check_tol(tol: f64, sigma_n_sq: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold tolerance must be positive, got {tol}")));
    }
    if !(sigma_n_sq > 0.0) || !sigma_n_sq.is_finite() {
        return Err(Error::InvalidConfig(format!("noise variance must be positive, got {sigma_n_sq}")));
    }
    Ok(())
}

/// Largest load scanned by the threshold searches.
pub const BETA_SEARCH_MAX: f64 = 4.0;
const BETA_SCAN_STEP: f64 = 0.01;
const GUARD_BAND: f64 = 1e-6;

/// Uncoupled BP classification: a single fixed point, or the recursion from
/// `s = 0` ends at the largest one.
pub fn uncoupled_bp_good(beta: f64, sigma_n_sq: f64) -> Result<bool> {
    let set = uncoupled_fixed_points(beta, sigma_n_sq)?;
    if set.roots.len() == 1 {
        return Ok(true);
    }
    let params = DeParams::uncoupled(beta, sigma_n_sq)?;
    let run = de_run(&params, &DeOptions { max_iters: 100_000, tol: 1e-12, ..Default::default() })?;
    let s = run.final_state.sir[0];
    Ok((s - set.largest()).abs() <= 1e-6 * set.largest())
}

/// Onset of bistability: bisection on [`uncoupled_bp_good`] after a scan of
/// `(0, 4]` for the first bad load. `NotInRange` when every load is good.
pub fn bp_threshold_uncoupled(sigma_n_sq: f64, tol_beta: f64) -> Result<ThresholdResult> {
    check_tol(tol_beta, sigma_n_sq)?;
    let mut lo = 0.0;
    let mut probes = 0;
    let mut hi = None;
    let steps = (BETA_SEARCH_MAX / BETA_SCAN_STEP).round() as usize;
    for i in 1..=steps {
        let beta = i as f64 * BETA_SCAN_STEP;
        probes += 1;
        if uncoupled_bp_good(beta, sigma_n_sq)? {
            lo = beta;
        } else {
            hi = Some(beta);
            break;
        }
    }
    let hi = hi.ok_or(Error::NotInRange { lo: 0.0, hi: BETA_SEARCH_MAX })?;
    let (lo, hi, more) = bisect_classifier(|b| uncoupled_bp_good(b, sigma_n_sq), lo, hi, tol_beta)?;
    Ok(ThresholdResult {
        beta_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        method: ThresholdMethod::Bifurcation,
        snr_db: snr_db_from_noise_variance(sigma_n_sq),
        diagnostics: ThresholdDiagnostics { probes: probes + more, ..Default::default() },
    })
}

/// Which height function the equal-height search compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqualHeightRoute {
    /// `F(s_l) - F(s_r)` at the stable roots of the fixed-point equation.
    FreeEnergy,
    /// `V(u_l) - V(u_r)` at the minima of the potential, located in `u`.
    Potential,
}

/// Height difference between the left and right stable states, `None` when
/// the load is not bistable.
pub fn height_difference(beta: f64, sigma_n_sq: f64, route: EqualHeightRoute) -> Result<Option<f64>> {
    match route {
        EqualHeightRoute::FreeEnergy => {
            let set: FixedPointSet = uncoupled_fixed_points(beta, sigma_n_sq)?;
            if !set.is_bistable() {
                return Ok(None);
            }
            Ok(Some(free_energy(set.smallest(), beta, sigma_n_sq) - free_energy(set.largest(), beta, sigma_n_sq)))
        }
        EqualHeightRoute::Potential => {
            let st = potential_stationary_points(beta, sigma_n_sq)?;
            if st.len() < 3 {
                return Ok(None);
            }
            let ul = st[0].0;
            let ur = st[st.len() - 1].0;
            Ok(Some(potential(ul, beta, sigma_n_sq)? - potential(ur, beta, sigma_n_sq)?))
        }
    }
}

/// IO threshold through the free-energy route.
pub fn io_threshold(sigma_n_sq: f64, tol_beta: f64) -> Result<ThresholdResult> {
    equal_height_threshold(sigma_n_sq, tol_beta, EqualHeightRoute::FreeEnergy)
}

/// Potential threshold: equal depth of the two minima of `V`.
pub fn potential_threshold(sigma_n_sq: f64, tol_beta: f64) -> Result<ThresholdResult> {
    equal_height_threshold(sigma_n_sq, tol_beta, EqualHeightRoute::Potential)
}

/// Bisection for the sign change of the height difference inside the
/// bistable window, starting just above the uncoupled BP threshold.
pub fn equal_height_threshold(sigma_n_sq: f64, tol_beta: f64, route: EqualHeightRoute) -> Result<ThresholdResult> {
    check_tol(tol_beta, sigma_n_sq)?;
    let bp = match bp_threshold_uncoupled(sigma_n_sq, 1e-8) {
        Ok(r) => r,
        Err(Error::NotInRange { .. }) => return Err(Error::MonostableRegime { beta: BETA_SEARCH_MAX, sigma_n_sq }),
        Err(e) => return Err(e),
    };
    let mut probes = bp.diagnostics.probes;
    // Shrink in from outside the guard band until the load is bistable.
    let mut lo = bp.bracket.1 + GUARD_BAND;
    let mut d_lo = None;
    for _ in 0..60 {
        probes += 1;
        if let Some(d) = height_difference(lo, sigma_n_sq, route)? {
            d_lo = Some(d);
            break;
        }
        lo += GUARD_BAND;
    }
    let d_lo = d_lo.ok_or(Error::MonostableRegime { beta: lo, sigma_n_sq })?;
    if d_lo <= 0.0 {
        return Err(Error::NotConverged(format!("height difference already nonpositive at beta = {lo}")));
    }
    let mut hi = None;
    let mut beta = lo;
    while beta < BETA_SEARCH_MAX {
        beta = (beta + BETA_SCAN_STEP).min(BETA_SEARCH_MAX);
        probes += 1;
        match height_difference(beta, sigma_n_sq, route)? {
            Some(d) if d > 0.0 => lo = beta,
            Some(_) => {
                hi = Some(beta);
                break;
            }
            None => return Err(Error::MonostableRegime { beta, sigma_n_sq }),
        }
    }
    let hi = hi.ok_or(Error::NotInRange { lo, hi: BETA_SEARCH_MAX })?;
    let (lo, hi, more) = bisect_classifier(
        |b| {
            height_difference(b, sigma_n_sq, route)?
                .map(|d| d > 0.0)
                .ok_or(Error::MonostableRegime { beta: b, sigma_n_sq })
        },
        lo,
        hi,
        tol_beta,
    )?;
    Ok(ThresholdResult {
        beta_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        method: ThresholdMethod::EqualHeight,
        snr_db: snr_db_from_noise_variance(sigma_n_sq),
        diagnostics: ThresholdDiagnostics {
            probes: probes + more,
            note: format!("{route:?} route"),
            ..Default::default()
        },
    })
}

/// Settings of the coupled threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSearch {
    pub de: DeOptions,
    /// Allowed gap between the terminal middle-position efficiency and the
    /// efficiency of the largest uncoupled root.
    pub eta_gap: f64,
    /// Step of the upward scan for the first bad load.
    pub scan_step: f64,
}

impl Default for CoupledSearch {
    fn default() -> Self {
        CoupledSearch { de: DeOptions::default(), eta_gap: 1e-3, scan_step: 0.05 }
    }
}

/// Outcome of one coupled classification probe.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledProbe {
    pub good: bool,
    pub eta_middle: f64,
    pub eta_target: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn coupled_probe(params: &DeParams, search: &CoupledSearch) -> Result<CoupledProbe> {
    let run = de_run(params, &search.de)?;
    let eta_middle = params.sigma_n_sq * run.final_state.sir[params.middle()];
    let eta_target = params.sigma_n_sq * uncoupled_fixed_points(params.beta, params.sigma_n_sq)?.largest();
    Ok(CoupledProbe {
        good: (eta_middle - eta_target).abs() <= search.eta_gap,
        eta_middle,
        eta_target,
        iterations: run.final_state.iteration,
        converged: run.converged,
    })
}

/// Coupled BP threshold with the default search settings.
pub fn coupled_bp_threshold(l: usize, w: usize, beta_init: f64, sigma_n_sq: f64, tol_beta: f64) -> Result<ThresholdResult> {
    coupled_bp_threshold_with(l, w, beta_init, sigma_n_sq, tol_beta, &CoupledSearch::default())
}

/// Bisection on the coupled classification, bracketed below by the uncoupled
/// BP threshold and above by an upward scan.
pub fn coupled_bp_threshold_with(
    l: usize,
    w: usize,
    beta_init: f64,
    sigma_n_sq: f64,
    tol_beta: f64,
    search: &CoupledSearch,
) -> Result<ThresholdResult> {
    check_tol(tol_beta, sigma_n_sq)?;
    DeParams::new(1.0, beta_init, sigma_n_sq, l, w)?;
    let mut diag = ThresholdDiagnostics::default();
    let probe = |beta: f64, diag: &mut ThresholdDiagnostics| -> Result<bool> {
        let p = coupled_probe(&DeParams::new(beta, beta_init, sigma_n_sq, l, w)?, search)?;
        diag.probes += 1;
        diag.de_iterations += p.iterations;
        if !p.converged {
            diag.unconverged_probes += 1;
        }
        Ok(p.good)
    };
    let mut lo = match bp_threshold_uncoupled(sigma_n_sq, 1e-6) {
        Ok(r) => r.bracket.0,
        Err(Error::NotInRange { .. }) => BETA_SEARCH_MAX,
        Err(e) => return Err(e),
    };
    if !probe(lo, &mut diag)? {
        return Err(Error::NotConverged(format!("coupled DE is not good at the uncoupled BP threshold {lo}")));
    }
    let mut hi = None;
    let mut beta = lo;
    while beta < BETA_SEARCH_MAX {
        beta = (beta + search.scan_step).min(BETA_SEARCH_MAX);
        if probe(beta, &mut diag)? {
            lo = beta;
        } else {
            hi = Some(beta);
            break;
        }
    }
    let hi = hi.ok_or(Error::NotInRange { lo, hi: BETA_SEARCH_MAX })?;
    let (lo, hi, _) = bisect_classifier(|b| probe(b, &mut diag), lo, hi, tol_beta)?;
    Ok(ThresholdResult {
        beta_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        method: ThresholdMethod::CoupledDeBisection,
        snr_db: snr_db_from_noise_variance(sigma_n_sq),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_variance_from_db;
    use crate::scalar_mmse::xi;

    fn s10() -> f64 {
        noise_variance_from_db(10.0)
    }

    #[test]
    fn free_energy_trivial_values() {
        let sn = s10();
        assert_eq!(free_energy(1.0 / sn, 0.0, sn), 0.0);
        assert_eq!(free_energy_alt(3.0, 0.0, sn), 0.0);
        let b = 1.7;
        let lim = 0.5 * (1.0 + b / sn).ln();
        assert!((free_energy_alt(1e-12, b, sn) - lim).abs() < 1e-9);
    }

    #[test]
    fn free_energy_forms_agree_and_are_stationary_at_roots() {
        let sn = s10();
        for &beta in &[1.2, 1.8, 1.99, 2.2] {
            for r in uncoupled_fixed_points(beta, sn).unwrap().roots {
                let s = r.s;
                assert!((free_energy(s, beta, sn) - free_energy_alt(s, beta, sn)).abs() < 1e-9);
                let h = 1e-5 * s;
                let d = (free_energy(s + h, beta, sn) - free_energy(s - h, beta, sn)) / (2.0 * h);
                assert!(d.abs() < 1e-6, "F'({s}) = {d}");
            }
        }
    }

    #[test]
    fn potential_endpoints_and_domain() {
        let sn = s10();
        let b = 1.9;
        assert!((potential(-b, b, sn).unwrap() - (1.0 + b / sn).ln()).abs() < 1e-12);
        assert!((potential(0.0, b, sn).unwrap() - 2.0 * b * LN_2).abs() < 1e-12);
        assert!(matches!(potential(0.1, b, sn), Err(Error::DomainError(_))));
        assert!(matches!(potential(-2.0, b, sn), Err(Error::DomainError(_))));
    }

    #[test]
    fn potential_is_twice_alt_free_energy() {
        let sn = s10();
        let b = 1.99;
        let t = MmseTable::global();
        for i in 1..1000 {
            let u = -b + b * i as f64 / 1000.0;
            let v = t.xi_inverse(-u / b);
            let lhs = potential(u, b, sn).unwrap();
            assert!((lhs - 2.0 * free_energy_alt(v, b, sn)).abs() < 1e-9, "u = {u}");
        }
    }

    #[test]
    fn stationary_points_map_to_roots() {
        let sn = s10();
        for &beta in &[1.5, 1.99, 2.4] {
            let roots = uncoupled_fixed_points(beta, sn).unwrap().roots;
            let st = potential_stationary_points(beta, sn).unwrap();
            assert_eq!(roots.len(), st.len(), "beta {beta}");
            for (r, (u, _)) in roots.iter().zip(&st) {
                assert!((u - (-beta * xi(r.s))).abs() < 1e-8, "beta {beta}: {u} vs root {}", r.s);
            }
        }
        let st = potential_stationary_points(1.99, sn).unwrap();
        let kinds: Vec<_> = st.iter().map(|x| x.1).collect();
        assert_eq!(kinds, vec![StationaryKind::LeftStable, StationaryKind::Unstable, StationaryKind::RightStable]);
    }

    #[test]
    fn monostable_low_snr() {
        let sn = noise_variance_from_db(-10.0);
        assert!(matches!(bp_threshold_uncoupled(sn, 1e-4), Err(Error::NotInRange { .. })));
        assert!(matches!(io_threshold(sn, 1e-4), Err(Error::MonostableRegime { .. })));
    }
}
