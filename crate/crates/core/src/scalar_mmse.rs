//! Scalar BPSK-over-AWGN primitives.
//!
//! For a uniform symbol `b = ±1` observed as `z = b + w`, `w ~ N(0, 1/s)`,
//! this module provides the posterior mean, the MMSE `xi(s)` and the
//! mutual information `C(s)` in nats. Expectations over the standard normal
//! use Gauss–Hermite quadrature; [`MmseTable`] memoizes `xi` and `C` on a
//! dense grid for the analytical modules.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use crate::{Error, Result};

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_QUADRATURE_NODES: usize = 300;
/// Smallest admissible quadrature rule.
pub const MIN_QUADRATURE_NODES: usize = 32;

/// Above this SNR `xi` is below 1e-300 and `C` equals `ln 2` to machine precision.
pub const SNR_SATURATION: f64 = 1600.0;

/// Nonnegative, finite SNR of the scalar channel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Snr(f64);

impl Snr {
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::DomainError(format!("SNR must be finite and nonnegative, got {value}")));
        }
        Ok(Snr(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    /// Nodes and weights for `E[f(g)]`, `g ~ N(0, 1)`.
    GaussHermite,
}

/// Quadrature rule for standard-normal expectations. Weights sum to one.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: QuadratureKind,
}

impl QuadratureRule {
    /// `n`-point Gauss–Hermite rule rescaled to the standard normal.
    ///
    /// Roots of the orthonormal Hermite polynomials are found by Newton's
    /// method from asymptotic initial guesses.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n < MIN_QUADRATURE_NODES {
            return Err(Error::InvalidConfig(format!(
                "quadrature needs at least {MIN_QUADRATURE_NODES} nodes, got {n}"
            )));
        }
        // Golub–Welsch eigenvalues seed Newton on the orthonormal recurrence,
        // which also yields full-precision weights.
        let jacobi = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                ((i.max(j)) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut guesses: Vec<f64> = nalgebra::SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guesses.sort_by(|a, b| b.total_cmp(a));
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = guesses[i];
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NotConverged(format!("Gauss-Hermite root {i} of {n}")));
            }
            if i > 0 && !(z < x[i - 1]) {
                return Err(Error::NotConverged(format!("Gauss-Hermite roots collided at {i} of {n}")));
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let norm = PI.sqrt();
        let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights: Vec<f64> = w.iter().rev().map(|v| v / norm).collect();
        Ok(QuadratureRule { nodes, weights, kind: QuadratureKind::GaussHermite })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(g)]` for `g ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&g, &w)| w * f(g)).sum()
    }
}

/// Posterior mean of a uniform ±1 symbol given `z = b + w`, `w ~ N(0, 1/s)`.
pub fn posterior_mean(z: f64, s: Snr) -> f64 {
    (s.0 * z).tanh()
}

#[inline]
fn one_minus_tanh(x: f64) -> f64 {
    2.0 / (1.0 + (2.0 * x).exp())
}

#[inline]
fn sech_sq(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// MMSE `xi(s) = 1 - E[tanh(s + sqrt(s) g)]` by direct quadrature.
pub fn mmse_xi(s: Snr, quad: &QuadratureRule) -> f64 {
    let s = s.0;
    if s == 0.0 {
        return 1.0;
    }
    if s >= SNR_SATURATION {
        return 0.0;
    }
    let rs = s.sqrt();
    quad.expect(|g| one_minus_tanh(s + rs * g)).clamp(0.0, 1.0)
}

/// Derivative `d xi / ds` by direct quadrature.
pub fn mmse_xi_derivative(s: Snr, quad: &QuadratureRule) -> f64 {
    let s = s.0;
    if s == 0.0 {
        return -1.0;
    }
    if s >= SNR_SATURATION {
        return 0.0;
    }
    let rs = s.sqrt();
    -quad.expect(|g| sech_sq(s + rs * g) * (1.0 + g / (2.0 * rs)))
}

/// Mutual information `C(s) = s - E[ln cosh(s + sqrt(s) g)]` in nats.
pub fn mutual_info_c(s: Snr, quad: &QuadratureRule) -> f64 {
    let s = s.0;
    if s == 0.0 {
        return 0.0;
    }
    if s >= SNR_SATURATION {
        return LN_2;
    }
    let rs = s.sqrt();
    // ln cosh z = z - ln 2 + ln(1 + e^{-2|z|}) + 2 max(-z, 0), and E[z] = s.
    let excess = quad.expect(|g| {
        let z = s + rs * g;
        (-2.0 * z.abs()).exp().ln_1p() + 2.0 * (-z).max(0.0)
    });
    (LN_2 - excess).clamp(0.0, LN_2)
}

/// Derivative `dC/ds` by direct quadrature (independent of `xi`).
pub fn mutual_info_c_derivative(s: Snr, quad: &QuadratureRule) -> f64 {
    let s = s.0;
    if s == 0.0 {
        return 0.5;
    }
    if s >= SNR_SATURATION {
        return 0.0;
    }
    let rs = s.sqrt();
    quad.expect(|g| one_minus_tanh(s + rs * g) * (1.0 + g / (2.0 * rs)))
}

/// Memoized `xi` and `C` on a uniform grid in `q = sqrt(s)`, with
/// monotone cubic Hermite interpolation using quadrature derivatives.
#[derive(Debug)]
pub struct MmseTable {
    quad: QuadratureRule,
    step: f64,
    xi: Vec<f64>,
    dxi: Vec<f64>,
    c: Vec<f64>,
    dc: Vec<f64>,
}

/// Grid intervals used by [`MmseTable::global`].
pub const DEFAULT_GRID_INTERVALS: usize = 8000;

static GLOBAL_TABLE: OnceLock<MmseTable> = OnceLock::new();

impl MmseTable {
    pub fn build(quad: QuadratureRule, intervals: usize) -> Result<Self> {
        if intervals < 100 {
            return Err(Error::InvalidConfig(format!("memo grid needs at least 100 intervals, got {intervals}")));
        }
        let q_max = SNR_SATURATION.sqrt();
        let step = q_max / intervals as f64;
        let n = intervals + 1;
        let mut xi = Vec::with_capacity(n);
        let mut dxi = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut dc = Vec::with_capacity(n);
        for i in 0..n {
            let q = step * i as f64;
            let s = Snr(q * q);
            xi.push(mmse_xi(s, &quad));
            dxi.push(2.0 * q * mmse_xi_derivative(s, &quad));
            c.push(mutual_info_c(s, &quad));
            dc.push(2.0 * q * mutual_info_c_derivative(s, &quad));
        }
        limit_slopes(&xi, &mut dxi, step);
        limit_slopes(&c, &mut dc, step);
        Ok(MmseTable { quad, step, xi, dxi, c, dc })
    }

    /// Shared table with the default rule and grid, built on first use.
    pub fn global() -> &'static MmseTable {
        GLOBAL_TABLE.get_or_init(|| {
            let quad = QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_NODES).expect("default rule");
            MmseTable::build(quad, DEFAULT_GRID_INTERVALS).expect("default grid")
        })
    }

    /// Installs a shared table with a custom node count. Fails if a table
    /// with a different node count is already in use.
    pub fn configure_global(nodes: usize) -> Result<&'static MmseTable> {
        let table = GLOBAL_TABLE.get_or_init(|| {
            let quad = QuadratureRule::gauss_hermite(nodes.max(MIN_QUADRATURE_NODES)).expect("valid rule");
            MmseTable::build(quad, DEFAULT_GRID_INTERVALS).expect("default grid")
        });
        if table.quad.len() != nodes {
            return Err(Error::InvalidConfig(format!(
                "shared MMSE table already built with {} quadrature nodes",
                table.quad.len()
            )));
        }
        Ok(table)
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let q = s.sqrt() / self.step;
        let i = (q.floor() as usize).min(self.xi.len() - 2);
        (i, q - i as f64)
    }

    fn hermite(&self, y: &[f64], dy: &[f64], i: usize, t: f64) -> f64 {
        let (y0, y1) = (y[i], y[i + 1]);
        let (m0, m1) = (dy[i] * self.step, dy[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        v.clamp(y0.min(y1), y0.max(y1))
    }

    /// Interpolated `xi(s)`; `s` must be nonnegative (NaN maps to NaN).
    pub fn xi(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        if s >= SNR_SATURATION {
            return 0.0;
        }
        let (i, t) = self.locate(s);
        self.hermite(&self.xi, &self.dxi, i, t)
    }

    /// Interpolated `C(s)` in nats.
    pub fn c(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= SNR_SATURATION {
            return LN_2;
        }
        let (i, t) = self.locate(s);
        self.hermite(&self.c, &self.dc, i, t)
    }

    /// `d xi / ds` by direct quadrature with the table's rule.
    pub fn xi_derivative(&self, s: f64) -> f64 {
        mmse_xi_derivative(Snr(s.max(0.0)), &self.quad)
    }

    /// `xi^{-1}(v)` by bisection on the interpolant. Returns 0 for `v >= 1`
    /// and `+inf` for `v <= 0`.
    pub fn xi_inverse(&self, v: f64) -> f64 {
        if v >= 1.0 {
            return 0.0;
        }
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        // Node values are nonincreasing in the index.
        let idx = self.xi.partition_point(|&x| x > v);
        if idx >= self.xi.len() {
            return SNR_SATURATION;
        }
        let q_hi = self.step * idx as f64;
        let q_lo = self.step * idx.saturating_sub(1) as f64;
        let (lo, hi) = crate::numeric::bisect(|q| self.xi(q * q) - v, q_lo, q_hi, 1e-15 * q_hi.max(1e-300));
        let q = 0.5 * (lo + hi);
        q * q
    }
}

/// Fritsch–Carlson limiter applied to exact derivatives so the Hermite
/// interpolant stays monotone between nodes.
fn limit_slopes(y: &[f64], dy: &mut [f64], step: f64) {
    for i in 0..y.len() - 1 {
        let delta = (y[i + 1] - y[i]) / step;
        if delta == 0.0 {
            dy[i] = 0.0;
            dy[i + 1] = 0.0;
            continue;
        }
        if dy[i] * delta < 0.0 {
            dy[i] = 0.0;
        }
        if dy[i + 1] * delta < 0.0 {
            dy[i + 1] = 0.0;
        }
        let a = dy[i] / delta;
        let b = dy[i + 1] / delta;
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            dy[i] = tau * a * delta;
            dy[i + 1] = tau * b * delta;
        }
    }
}

/// `xi(s)` through the shared table.
pub fn xi(s: f64) -> f64 {
    MmseTable::global().xi(s)
}

/// `C(s)` through the shared table.
pub fn mutual_info(s: f64) -> f64 {
    MmseTable::global().c(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn rule() -> &'static QuadratureRule {
        MmseTable::global().quadrature()
    }

    #[test]
    fn quadrature_rule_invariants() {
        let r = QuadratureRule::gauss_hermite(64).unwrap();
        assert_eq!(r.len(), 64);
        assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.weights().iter().all(|&w| w > 0.0));
        // Standard-normal moments: E[g^2] = 1, E[g^4] = 3, E[g^6] = 15.
        assert!((r.expect(|g| g * g) - 1.0).abs() < 1e-12);
        assert!((r.expect(|g| g.powi(4)) - 3.0).abs() < 1e-11);
        assert!((r.expect(|g| g.powi(6)) - 15.0).abs() < 1e-10);
        let big = rule();
        assert!((big.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(QuadratureRule::gauss_hermite(16).is_err());
    }

    #[test]
    fn posterior_mean_trivial_cases() {
        assert_eq!(posterior_mean(0.7, Snr::new(0.0).unwrap()), 0.0);
        assert_eq!(posterior_mean(0.0, Snr::new(5.0).unwrap()), 0.0);
    }

    fn bayes_ratio(z: f64, s: f64) -> f64 {
        // Two Gaussian likelihoods N(z; ±1, 1/s) with equal priors.
        let p = (-(z - 1.0).powi(2) * s / 2.0).exp();
        let m = (-(z + 1.0).powi(2) * s / 2.0).exp();
        (p - m) / (p + m)
    }

    #[test]
    fn posterior_mean_matches_bayes_rule() {
        let v = posterior_mean(1.0, Snr::new(2.0).unwrap());
        assert!((v - bayes_ratio(1.0, 2.0)).abs() < 1e-12);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-3.0..3.0);
            let s: f64 = rng.random_range(0.0..8.0);
            let v = posterior_mean(z, Snr::new(s).unwrap());
            assert!((v - bayes_ratio(z, s)).abs() < 1e-12, "z={z} s={s}");
        }
    }

    #[test]
    fn closed_form_limits() {
        let q = rule();
        assert_eq!(mmse_xi(Snr::new(0.0).unwrap(), q), 1.0);
        assert!(mmse_xi(Snr::new(1e6).unwrap(), q) < 1e-6);
        assert_eq!(mutual_info_c(Snr::new(0.0).unwrap(), q), 0.0);
        assert!((mutual_info_c(Snr::new(1e6).unwrap(), q) - LN_2).abs() < 1e-6);
        assert!(Snr::new(-1.0).is_err());
        assert!(Snr::new(f64::NAN).is_err());
    }

    /// Monte Carlo estimate with standard error.
    fn monte_carlo<F: Fn(f64) -> f64>(f: F, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let g: f64 = rng.sample(StandardNormal);
            let v = f(g);
            sum += v;
            sum_sq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn xi_and_c_at_unit_snr_match_monte_carlo() {
        let q = rule();
        let s = 1.0;
        // Squared error of the posterior mean with b = +1 (symmetry).
        let (xi_mc, se) = monte_carlo(|g| (1.0 - (s + g).tanh()).powi(2), 10_000_000, 3);
        let xi_q = mmse_xi(Snr::new(s).unwrap(), q);
        assert!((xi_q - xi_mc).abs() < 3.0 * se, "{xi_q} vs {xi_mc} ± {se}");
        // I(b; z) = ln 2 - E[ln(1 + exp(-2 s z))] with z = 1 + g / sqrt(s).
        let (c_mc, se) = monte_carlo(|g| LN_2 - (-2.0 * (s + g)).exp().ln_1p(), 10_000_000, 4);
        let c_q = mutual_info_c(Snr::new(s).unwrap(), q);
        assert!((c_q - c_mc).abs() < 3.0 * se, "{c_q} vs {c_mc} ± {se}");
    }

    #[test]
    fn guo_shamai_verdu_identity() {
        let table = MmseTable::global();
        let mut worst: f64 = 0.0;
        for k in 0..200 {
            let s = 10f64.powf(-3.0 + 6.0 * k as f64 / 199.0);
            let h = 1e-4 * s;
            let dc = (table.c(s + h) - table.c(s - h)) / (2.0 * h);
            worst = worst.max((dc - table.xi(s) / 2.0).abs());
        }
        assert!(worst < 1e-6, "max deviation {worst}");
    }

    #[test]
    fn memo_table_matches_direct_quadrature() {
        let table = MmseTable::global();
        let q = table.quadrature();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = 10f64.powf(rng.random_range(-4.0..3.2));
            let snr = Snr::new(s).unwrap();
            assert!((table.xi(s) - mmse_xi(snr, q)).abs() < 1e-8, "xi at {s}");
            assert!((table.c(s) - mutual_info_c(snr, q)).abs() < 1e-8, "C at {s}");
        }
    }

    #[test]
    fn xi_strictly_decreasing_on_random_pairs() {
        let table = MmseTable::global();
        let q = table.quadrature();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.0..40.0);
            let b: f64 = rng.random_range(0.0..40.0);
            let (s1, s2) = if a < b { (a, b) } else { (b, a) };
            if s1 == s2 {
                continue;
            }
            assert!(mmse_xi(Snr::new(s1).unwrap(), q) > mmse_xi(Snr::new(s2).unwrap(), q));
            assert!(table.xi(s1) > table.xi(s2));
        }
    }

    #[test]
    fn derivative_quadratures_match_finite_differences() {
        let q = rule();
        for &s in &[0.01, 0.3, 1.0, 4.0, 12.0, 60.0] {
            let h = 1e-5 * s;
            let fd_xi = (mmse_xi(Snr(s + h), q) - mmse_xi(Snr(s - h), q)) / (2.0 * h);
            let fd_c = (mutual_info_c(Snr(s + h), q) - mutual_info_c(Snr(s - h), q)) / (2.0 * h);
            assert!((mmse_xi_derivative(Snr(s), q) - fd_xi).abs() < 1e-6, "xi' at {s}");
            assert!((mutual_info_c_derivative(Snr(s), q) - fd_c).abs() < 1e-6, "C' at {s}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let table = MmseTable::global();
        assert_eq!(table.xi_inverse(1.0), 0.0);
        assert_eq!(table.xi_inverse(0.0), f64::INFINITY);
        for &s in &[1e-3, 0.5, 2.0, 9.3, 40.0, 300.0] {
            let v = table.xi(s);
            let back = table.xi_inverse(v);
            assert!((back - s).abs() < 1e-9 * s.max(1.0), "{s} -> {v} -> {back}");
        }
    }
}
