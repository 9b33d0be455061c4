//! Coupled density evolution for the per-position SIR of BP messages.
//!
//! With `beta_l = beta_init` for `l < W` and `beta` otherwise:
//!
//! ```text
//! sigma_l^2 = sigma_n^2 + beta_l/(W+1) * sum_{w=0..W} xi(sir_{(l-w) mod L})
//! sir_l'    = 1/(W+1) * sum_{w=0..W} 1/sigma_{(l'+w) mod L}^2
//! ```

use std::io::Write;

use crate::ensemble::{circular, SystemConfig};
use crate::scalar_mmse::MmseTable;
use crate::{Error, Result};

/// Real-valued parameters of the coupled recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeParams {
    pub beta: f64,
    pub beta_init: f64,
    pub sigma_n_sq: f64,
    pub l: usize,
    pub w: usize,
}

impl DeParams {
    pub fn new(beta: f64, beta_init: f64, sigma_n_sq: f64, l: usize, w: usize) -> Result<Self> {
        let p = DeParams { beta, beta_init, sigma_n_sq, l, w };
        p.validate()?;
        Ok(p)
    }

    /// Single uncoupled position (`L = 1`, `W = 0`).
    pub fn uncoupled(beta: f64, sigma_n_sq: f64) -> Result<Self> {
        Self::new(beta, beta, sigma_n_sq, 1, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.beta_init >= 0.0 && self.beta_init.is_finite()) {
            return Err(Error::InvalidConfig(format!("loads must be finite and nonnegative: {self:?}")));
        }
        if !(self.sigma_n_sq > 0.0 && self.sigma_n_sq.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise variance must be positive: {}", self.sigma_n_sq)));
        }
        if self.l == 0 || self.w >= self.l {
            return Err(Error::InvalidConfig(format!("need 0 <= W < L, got L = {}, W = {}", self.l, self.w)));
        }
        Ok(())
    }

    pub fn beta_at(&self, l: usize) -> f64 {
        if l < self.w {
            self.beta_init
        } else {
            self.beta
        }
    }

    /// Index of the middle position `l'/L = 1/2`.
    pub fn middle(&self) -> usize {
        self.l / 2
    }
}

impl From<&SystemConfig> for DeParams {
    fn from(c: &SystemConfig) -> Self {
        DeParams { beta: c.beta(), beta_init: c.beta_init(), sigma_n_sq: c.sigma_n_sq, l: c.l, w: c.w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeState {
    pub sir: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub iteration: usize,
}

impl DeState {
    /// Uninformative start `sir = 0`.
    pub fn zero(params: &DeParams) -> Self {
        DeState { sir: vec![0.0; params.l], sigma_sq: vec![f64::NAN; params.l], iteration: 0 }
    }

    /// Genie start `sir = 1/sigma_n^2`.
    pub fn genie(params: &DeParams) -> Self {
        DeState { sir: vec![1.0 / params.sigma_n_sq; params.l], sigma_sq: vec![params.sigma_n_sq; params.l], iteration: 0 }
    }
}

/// `eta = sigma_n^2 * sir` per position.
pub fn multiuser_efficiency(state: &DeState, sigma_n_sq: f64) -> Vec<f64> {
    state.sir.iter().map(|s| sigma_n_sq * s).collect()
}

/// One step of the recursion.
pub fn de_step(state: &DeState, params: &DeParams) -> DeState {
    let table = MmseTable::global();
    let xi: Vec<f64> = state.sir.iter().map(|&s| table.xi(s)).collect();
    step_with_xi(state, params, &xi)
}

fn step_with_xi(state: &DeState, params: &DeParams, xi: &[f64]) -> DeState {
    let (big_l, w) = (params.l, params.w);
    let width = (w + 1) as f64;
    let sigma_sq: Vec<f64> = (0..big_l)
        .map(|l| {
            let mut acc = 0.0;
            for d in 0..=w {
                acc += xi[circular(l as isize - d as isize, big_l)];
            }
            params.sigma_n_sq + params.beta_at(l) / width * acc
        })
        .collect();
    let sir = (0..big_l)
        .map(|lp| {
            let mut acc = 0.0;
            for d in 0..=w {
                acc += 1.0 / sigma_sq[(lp + d) % big_l];
            }
            acc / width
        })
        .collect();
    DeState { sir, sigma_sq, iteration: state.iteration + 1 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Snapshot stride; 0 keeps only the initial and final states.
    pub dump_every: usize,
    /// Over-relaxation factor; 1 is the plain recursion.
    pub relaxation: f64,
}

impl Default for DeOptions {
    fn default() -> Self {
        DeOptions { max_iters: 1_000_000, tol: 1e-10, dump_every: 0, relaxation: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeTrajectory {
    pub snapshots: Vec<DeState>,
    pub final_state: DeState,
    pub converged: bool,
    /// Max componentwise SIR change of the last step.
    pub residual: f64,
    /// Components that decreased across a step (any iteration).
    pub decreases: usize,
    /// Components that increased across a step (any iteration).
    pub increases: usize,
}

impl DeTrajectory {
    pub fn eta(&self, sigma_n_sq: f64) -> Vec<f64> {
        multiuser_efficiency(&self.final_state, sigma_n_sq)
    }

    /// CSV with columns `iteration, position, sir, eta` for every snapshot.
    pub fn write_csv<W: Write>(&self, out: W, sigma_n_sq: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "position", "sir", "eta"]).map_err(crate::bp_receiver::csv_err)?;
        for s in &self.snapshots {
            for (p, &sir) in s.sir.iter().enumerate() {
                w.write_record([
                    s.iteration.to_string(),
                    p.to_string(),
                    format!("{sir:.15e}"),
                    format!("{:.15e}", sigma_n_sq * sir),
                ])
                .map_err(crate::bp_receiver::csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterates from `sir = 0` until the max componentwise change drops below
/// `tol` or `max_iters` is reached (then `converged = false`).
pub fn de_run(params: &DeParams, options: &DeOptions) -> Result<DeTrajectory> {
    de_run_from(params, DeState::zero(params), options)
}

pub fn de_run_from(params: &DeParams, initial: DeState, options: &DeOptions) -> Result<DeTrajectory> {
    params.validate()?;
    if !(options.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", options.tol)));
    }
    if initial.sir.len() != params.l {
        return Err(Error::DimensionMismatch { what: "DE state", expected: params.l, actual: initial.sir.len() });
    }
    let table = MmseTable::global();
    let mut state = initial;
    let mut snapshots = vec![state.clone()];
    let mut xi = vec![0.0; params.l];
    let (mut decreases, mut increases) = (0, 0);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while state.iteration < options.max_iters {
        for (x, &s) in xi.iter_mut().zip(&state.sir) {
            *x = table.xi(s);
        }
        let mut next = step_with_xi(&state, params, &xi);
        if options.relaxation != 1.0 {
            for (n, &o) in next.sir.iter_mut().zip(&state.sir) {
                *n = (o + options.relaxation * (*n - o)).clamp(0.0, 1.0 / params.sigma_n_sq);
            }
        }
        residual = 0.0;
        for (&n, &o) in next.sir.iter().zip(&state.sir) {
            if n < o {
                decreases += 1;
            } else if n > o {
                increases += 1;
            }
            residual = f64::max(residual, (n - o).abs());
        }
        state = next;
        if options.dump_every > 0 && state.iteration % options.dump_every == 0 {
            snapshots.push(state.clone());
        }
        if residual < options.tol {
            converged = true;
            break;
        }
    }
    if snapshots.last().map(|s| s.iteration) != Some(state.iteration) {
        snapshots.push(state.clone());
    }
    Ok(DeTrajectory { snapshots, final_state: state, converged, residual, decreases, increases })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub s: f64,
    pub stability: Stability,
    pub bracket: (f64, f64),
}

/// Roots of `1/s = sigma_n^2 + beta xi(s)` in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet {
    pub roots: Vec<FixedPoint>,
}

impl FixedPointSet {
    pub fn smallest(&self) -> f64 {
        self.roots.first().expect("at least one root").s
    }

    pub fn largest(&self) -> f64 {
        self.roots.last().expect("at least one root").s
    }

    pub fn is_bistable(&self) -> bool {
        self.roots.len() >= 3
    }
}

/// Residual `1/s - sigma_n^2 - beta xi(s)` of the uncoupled fixed-point equation.
pub fn fixed_point_residual(s: f64, beta: f64, sigma_n_sq: f64) -> f64 {
    1.0 / s - sigma_n_sq - beta * MmseTable::global().xi(s)
}

/// Slope of the uncoupled iteration map `s -> 1/(sigma_n^2 + beta xi(s))`.
pub fn iteration_map_slope(s: f64, beta: f64, sigma_n_sq: f64) -> f64 {
    let table = MmseTable::global();
    let d = sigma_n_sq + beta * table.xi(s);
    -beta * table.xi_derivative(s) / (d * d)
}

const ROOT_SCAN_POINTS: usize = 10_000;

/// All roots on `[1/(sigma_n^2 + beta), 1/sigma_n^2]`, located by a sign
/// scan on a log grid and bisection to 1e-12 relative.
pub fn uncoupled_fixed_points(beta: f64, sigma_n_sq: f64) -> Result<FixedPointSet> {
    if !(beta >= 0.0) || !beta.is_finite() || !(sigma_n_sq > 0.0) || !sigma_n_sq.is_finite() {
        return Err(Error::InvalidConfig(format!("need beta >= 0 and sigma_n^2 > 0, got {beta}, {sigma_n_sq}")));
    }
    let hi = 1.0 / sigma_n_sq;
    if beta == 0.0 {
        return Ok(FixedPointSet { roots: vec![FixedPoint { s: hi, stability: Stability::Stable, bracket: (hi, hi) }] });
    }
    let lo = 1.0 / (sigma_n_sq + beta);
    let f = |s: f64| fixed_point_residual(s, beta, sigma_n_sq);
    let ratio = (hi / lo).ln();
    let grid = |i: usize| {
        if i == ROOT_SCAN_POINTS - 1 {
            hi
        } else {
            lo * (ratio * i as f64 / (ROOT_SCAN_POINTS - 1) as f64).exp()
        }
    };
    let mut roots = Vec::new();
    let mut prev_s = grid(0);
    let mut prev_f = f(prev_s);
    for i in 1..ROOT_SCAN_POINTS {
        let s = grid(i);
        let fs = f(s);
        if prev_f == 0.0 || (prev_f > 0.0) != (fs > 0.0) {
            let (a, b) = if prev_f == 0.0 {
                (prev_s, prev_s)
            } else {
                crate::numeric::bisect(f, prev_s, s, 1e-12 * s)
            };
            let root = 0.5 * (a + b);
            if roots.last().is_none_or(|r: &FixedPoint| (root - r.s).abs() > 1e-12 * root) {
                let stability = if iteration_map_slope(root, beta, sigma_n_sq) < 1.0 {
                    Stability::Stable
                } else {
                    Stability::Unstable
                };
                roots.push(FixedPoint { s: root, stability, bracket: (a, b) });
            }
        }
        prev_s = s;
        prev_f = fs;
    }
    if roots.is_empty() {
        return Err(Error::NotConverged(format!("no fixed point found for beta = {beta}, sigma_n^2 = {sigma_n_sq}")));
    }
    Ok(FixedPointSet { roots })
}
