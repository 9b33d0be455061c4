//! Continuum-limit structure of the coupled recursion.
//!
//! The normal coordinate `u~ = g(u)` with `g'(u) = 1/(sqrt(3) (sigma_n^2 - u))`,
//! anchored at `g(-beta) = 0`, turns the potential into the effective
//! potential `U(u~) = V(g^{-1}(u~))`. Even stationary profiles on `[-1, 1]`
//! with `u~(+-1) = u~_r` satisfy `(gamma^2/2) u~'^2 - U(u~) = -U(u~(0))`, so the
//! center value solves `F(u~(0)) = 1/gamma` with
//! `F(u0) = int_{u0}^{u~_r} dy / sqrt(2 (U(y) - U(u0)))`.

use std::f64::consts::SQRT_2;

use crate::density_evolution::{uncoupled_fixed_points, FixedPointSet};
use crate::numeric::{bisect, golden_min, illinois, integrate};
use crate::scalar_mmse::MmseTable;
use crate::threshold::{free_energy, potential};
use crate::{Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const G_TOL: f64 = 1e-14;

/// Effective potential with its landmarks. `u_*` are in the normal
/// coordinate, `w_*` are the same points in the original coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePotential {
    pub beta: f64,
    pub sigma_n_sq: f64,
    /// Left stable state.
    pub u_l: f64,
    /// Barrier top (unstable fixed point).
    pub u_max: f64,
    /// Right stable state.
    pub u_r: f64,
    /// Point left of the barrier with `U(u_un) = U(u_r)`; only when the left
    /// well is the deeper one.
    pub u_un: Option<f64>,
    pub w_l: f64,
    pub w_max: f64,
    pub w_r: f64,
    pub w_un: Option<f64>,
    /// Largest quadrature error estimate met while mapping the landmarks.
    pub g_error_estimate: f64,
}

impl EffectivePotential {
    /// `g(u)` by adaptive quadrature of `g'` from `-beta`.
    pub fn g(&self, u: f64) -> f64 {
        g_numeric(u, self.beta, self.sigma_n_sq).value
    }

    /// `g^{-1}` by Newton's method on the quadrature.
    pub fn g_inverse(&self, ut: f64) -> f64 {
        g_inverse(ut, self.beta, self.sigma_n_sq)
    }

    fn v_orig(&self, w: f64) -> f64 {
        potential(w.clamp(-self.beta, 0.0), self.beta, self.sigma_n_sq).expect("u in domain")
    }

    fn v_orig_derivative(&self, w: f64) -> f64 {
        let w = w.clamp(-self.beta, 0.0);
        let v = MmseTable::global().xi_inverse(-w / self.beta);
        v - 1.0 / (self.sigma_n_sq - w)
    }

    /// `U(u~) = V(g^{-1}(u~))`.
    pub fn u_potential(&self, ut: f64) -> f64 {
        self.v_orig(self.g_inverse(ut))
    }

    /// `dU/du~ = sqrt(3) (v (sigma_n^2 - u) - 1)` with `v = xi^{-1}(-u/beta)`.
    pub fn u_potential_derivative(&self, ut: f64) -> f64 {
        let u = self.g_inverse(ut).clamp(-self.beta, 0.0);
        let v = MmseTable::global().xi_inverse(-u / self.beta);
        SQRT_3 * (v * (self.sigma_n_sq - u) - 1.0)
    }

    /// `d^2U/du~^2 = 3 (sigma_n^2 - u) (v'(u) (sigma_n^2 - u) - v)`,
    /// `v'(u) = -1/(beta xi'(v))`.
    pub fn u_potential_second_derivative(&self, ut: f64) -> f64 {
        let u = self.g_inverse(ut).clamp(-self.beta, 0.0);
        let table = MmseTable::global();
        let v = table.xi_inverse(-u / self.beta);
        let dv = -1.0 / (self.beta * table.xi_derivative(v));
        let d = self.sigma_n_sq - u;
        3.0 * d * (dv * d - v)
    }

    /// Multiuser efficiency `sigma_n^2 v` of a point in the normal coordinate.
    pub fn efficiency(&self, ut: f64) -> f64 {
        let u = self.g_inverse(ut).clamp(-self.beta, 0.0);
        let v = MmseTable::global().xi_inverse(-u / self.beta);
        (self.sigma_n_sq * v).min(1.0)
    }
}

/// `g(u)` with its quadrature error estimate.
pub fn g_numeric(u: f64, beta: f64, sigma_n_sq: f64) -> crate::numeric::Integral {
    integrate(|x| g_prime(x, sigma_n_sq), -beta, u, G_TOL, G_TOL, 200)
}

fn g_prime(u: f64, sigma_n_sq: f64) -> f64 {
    1.0 / (SQRT_3 * (sigma_n_sq - u))
}

fn g_inverse(ut: f64, beta: f64, sigma_n_sq: f64) -> f64 {
    // Linearization at the anchor, then Newton on the quadrature.
    let mut u = (-beta + ut * SQRT_3 * (sigma_n_sq + beta)).clamp(-beta, 0.0);
    for _ in 0..60 {
        let gu = g_numeric(u, beta, sigma_n_sq).value;
        let next = (u - (gu - ut) / g_prime(u, sigma_n_sq)).min(0.0);
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
            return next;
        }
        u = next;
    }
    u
}

/// Builds the effective potential and its landmarks.
pub fn build_effective_potential(beta: f64, sigma_n_sq: f64) -> Result<EffectivePotential> {
    let set: FixedPointSet = uncoupled_fixed_points(beta, sigma_n_sq)?;
    if !set.is_bistable() {
        return Err(Error::MonostableRegime { beta, sigma_n_sq });
    }
    let table = MmseTable::global();
    let w: Vec<f64> = set.roots.iter().map(|r| -beta * table.xi(r.s)).collect();
    let mapped: Vec<_> = w.iter().map(|&u| g_numeric(u, beta, sigma_n_sq)).collect();
    let g_error_estimate = mapped.iter().map(|r| r.error_estimate).fold(0.0, f64::max);
    let mut ep = EffectivePotential {
        beta,
        sigma_n_sq,
        u_l: mapped[0].value,
        u_max: mapped[1].value,
        u_r: mapped[2].value,
        u_un: None,
        w_l: w[0],
        w_max: w[1],
        w_r: w[2],
        w_un: None,
        g_error_estimate,
    };
    let v_r = ep.v_orig(ep.w_r);
    let height = |x: f64| ep.v_orig(x) - v_r;
    if height(ep.w_l) < 0.0 {
        let (a, b) = bisect(height, ep.w_l, ep.w_max, 1e-15 * (ep.w_max - ep.w_l));
        let w_un = 0.5 * (a + b);
        ep.w_un = Some(w_un);
        ep.u_un = Some(ep.g(w_un));
    }
    Ok(ep)
}

/// Value of the barrier integral with quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierIntegral {
    pub value: f64,
    pub error_estimate: f64,
    pub converged: bool,
}

/// Integrand of the barrier integral in the original coordinate:
/// `y = g(w0 + t^2)`, so `dy = 2 t g'(w0 + t^2) dt`.
struct Kernel<'a> {
    ep: &'a EffectivePotential,
    w0: f64,
    v0: f64,
    /// `V(w_r) - V(w0)`.
    drop: f64,
    near: f64,
}

impl<'a> Kernel<'a> {
    fn new(ep: &'a EffectivePotential, u0: f64) -> Self {
        let w0 = ep.g_inverse(u0);
        let v0 = ep.v_orig(w0);
        let near = 1e-3 * (ep.w_r - ep.w_l);
        // V(w_r) = V(w_un), so close to w_un the drop is a short integral of V'.
        let drop = match ep.w_un {
            Some(w_un) if (w_un - w0).abs() < near => {
                integrate(|y| ep.v_orig_derivative(y), w0, w_un, 1e-18, 1e-14, 50).value
            }
            _ => ep.v_orig(ep.w_r) - v0,
        };
        Kernel { ep, w0, v0, drop, near }
    }

    fn t_max(&self) -> f64 {
        (self.ep.w_r - self.w0).max(0.0).sqrt()
    }

    /// `V(w0 + dw) - V(w0)`, integrating `V'` near either end to avoid
    /// cancellation between nearly equal potential values.
    fn rise(&self, dw: f64) -> f64 {
        let w = self.w0 + dw;
        let dv = |y: f64| self.ep.v_orig_derivative(y);
        if dw < self.near {
            // Scaled so that tiny dw below the spacing of w0 stays positive.
            dw * integrate(|s| dv(self.w0 + s * dw), 0.0, 1.0, 0.0, 0.0, 1).value
        } else if self.ep.w_r - w < self.near {
            self.drop - integrate(dv, w, self.ep.w_r, 0.0, 0.0, 1).value
        } else {
            self.ep.v_orig(w) - self.v0
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let sn = self.ep.sigma_n_sq;
        if t == 0.0 {
            return 2.0 * g_prime(self.w0, sn) / (2.0 * self.ep.v_orig_derivative(self.w0)).sqrt();
        }
        let dw = t * t;
        2.0 * t * g_prime(self.w0 + dw, sn) / (SQRT_2 * self.rise(dw).max(f64::MIN_POSITIVE).sqrt())
    }
}

/// `F(u0)` via the substitution `y = u0 + t^2` (taken in the original coordinate).
pub fn barrier_integral_f(u0: f64, ep: &EffectivePotential) -> Result<f64> {
    Ok(barrier_integral(u0, ep)?.value)
}

pub fn barrier_integral(u0: f64, ep: &EffectivePotential) -> Result<BarrierIntegral> {
    let u_un = ep.u_un.ok_or(Error::MonostableRegime { beta: ep.beta, sigma_n_sq: ep.sigma_n_sq })?;
    if !(u0 > ep.u_l && u0 < u_un) {
        return Err(Error::DomainError(format!("center value {u0} outside ({}, {u_un})", ep.u_l)));
    }
    let k = Kernel::new(ep, u0);
    let r = integrate(|t| k.eval(t), 0.0, k.t_max(), 1e-12, 1e-10, 1500);
    Ok(BarrierIntegral { value: r.value, error_estimate: r.error_estimate, converged: r.converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileBranch {
    Uniform,
    Trapped,
    Separatrix,
}

/// Even stationary profile sampled on `x` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProfile {
    pub gamma: f64,
    pub center: f64,
    pub branch: ProfileBranch,
    /// False when the center lies closer to its landmark than the root
    /// bracket resolves; the center is then the bracket end and the profile
    /// is flat there away from the boundary layers.
    pub resolved: bool,
    pub x: Vec<f64>,
    pub u_tilde: Vec<f64>,
}

impl StationaryProfile {
    /// Original coordinate `u(x) = g^{-1}(u~(x))`.
    pub fn u(&self, ep: &EffectivePotential) -> Vec<f64> {
        self.u_tilde.iter().map(|&v| ep.g_inverse(v)).collect()
    }

    /// Multiuser efficiency along the profile.
    pub fn eta(&self, ep: &EffectivePotential) -> Vec<f64> {
        self.u_tilde.iter().map(|&v| ep.efficiency(v)).collect()
    }
}

/// Number of profile samples on `[-1, 1]`.
pub const PROFILE_SAMPLES: usize = 401;

/// Uniform profile plus, when `1/gamma` exceeds `min F`, the trapped and
/// separatrix profiles.
pub fn nonuniform_profiles(gamma: f64, beta: f64, sigma_n_sq: f64) -> Result<Vec<StationaryProfile>> {
    nonuniform_profiles_sampled(gamma, beta, sigma_n_sq, PROFILE_SAMPLES)
}

pub fn nonuniform_profiles_sampled(gamma: f64, beta: f64, sigma_n_sq: f64, samples: usize) -> Result<Vec<StationaryProfile>> {
    if !(gamma > 0.0) || samples < 3 {
        return Err(Error::InvalidConfig(format!("need gamma > 0 and at least 3 samples (gamma = {gamma})")));
    }
    let ep = build_effective_potential(beta, sigma_n_sq)?;
    let x: Vec<f64> = (0..samples).map(|i| -1.0 + 2.0 * i as f64 / (samples - 1) as f64).collect();
    let mut out = vec![StationaryProfile {
        gamma,
        center: ep.u_r,
        branch: ProfileBranch::Uniform,
        resolved: true,
        u_tilde: vec![ep.u_r; samples],
        x: x.clone(),
    }];
    let Some(centers) = center_values(gamma, &ep)? else {
        return Ok(out);
    };
    for (c, branch) in [(centers.trapped, ProfileBranch::Trapped), (centers.separatrix, ProfileBranch::Separatrix)] {
        let u_tilde = reconstruct(c.center, gamma, &ep, &x);
        out.push(StationaryProfile { gamma, center: c.center, branch, resolved: c.resolved, x: x.clone(), u_tilde });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterValue {
    pub center: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterValues {
    pub trapped: CenterValue,
    pub separatrix: CenterValue,
    /// Minimum of `F` over the bracket and where it is attained.
    pub f_min: f64,
    pub u_min: f64,
}

/// Roots of `F(u0) = 1/gamma` on `(u_l + eps, u_un - eps)`, `eps = 1e-8 span`.
/// `None` when `1/gamma` is below `min F` or the left well is not the deeper
/// one. A root beyond the bracket end is reported at that end, unresolved.
pub fn center_values(gamma: f64, ep: &EffectivePotential) -> Result<Option<CenterValues>> {
    let Some(u_un) = ep.u_un else {
        return Ok(None);
    };
    let span = u_un - ep.u_l;
    let eps = 1e-8 * span;
    let (a, b) = (ep.u_l + eps, u_un - eps);
    let f = |u: f64| barrier_integral_f(u, ep).unwrap_or(f64::INFINITY);
    let u_min = golden_min(f, a, b, 1e-6 * span);
    let f_min = f(u_min);
    let target = 1.0 / gamma;
    if target < f_min {
        return Ok(None);
    }
    // F grows like the log of the distance to either end, so solve in that
    // coordinate.
    let tol = 1e-12;
    let trapped = if f(a) < target {
        CenterValue { center: a, resolved: false }
    } else {
        let z = illinois(|z: f64| f(ep.u_l + z.exp()) - target, eps.ln(), (u_min - ep.u_l).ln(), tol, 100);
        CenterValue { center: ep.u_l + z.exp(), resolved: true }
    };
    let separatrix = if f(b) < target {
        CenterValue { center: b, resolved: false }
    } else {
        let z = illinois(|z: f64| f(u_un - z.exp()) - target, eps.ln(), (u_un - u_min).ln(), tol, 100);
        CenterValue { center: u_un - z.exp(), resolved: true }
    };
    Ok(Some(CenterValues { trapped, separatrix, f_min, u_min }))
}

/// Samples `u~(x)` from `int_{u~(x)}^{u~_r} dy/sqrt(2(U(y)-U(u0))) = (1-|x|)/gamma`,
/// held at `u0` where the right side exceeds `F(u0)`.
fn reconstruct(u0: f64, gamma: f64, ep: &EffectivePotential, x: &[f64]) -> Vec<f64> {
    let k = Kernel::new(ep, u0);
    let h = |t: f64| k.eval(t);
    let t_max = k.t_max();
    // Cumulative integral from the center on a t-grid graded towards both
    // ends, where the integrand can peak sharply; slopes are exact.
    let mut ts: Vec<f64> = (0..=RECONSTRUCT_PANELS).map(|j| t_max * j as f64 / RECONSTRUCT_PANELS as f64).collect();
    for e in 1..=240 {
        let d = t_max * 10f64.powf(-(e as f64) / 20.0);
        ts.push(d);
        ts.push(t_max - d);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|p, q| (*p - *q).abs() <= 1e-15 * t_max);
    let hs: Vec<f64> = ts.iter().map(|&t| h(t)).collect();
    let mut gs = vec![0.0; ts.len()];
    for j in 1..ts.len() {
        gs[j] = gs[j - 1] + integrate(h, ts[j - 1], ts[j], 1e-16, 1e-13, 100).value;
    }
    let m = ts.len() - 1;
    let total = gs[m];
    x.iter()
        .map(|&xi| {
            let target = total - (1.0 - xi.abs()) / gamma;
            if target <= 0.0 {
                return u0;
            }
            if target >= total {
                return ep.u_r;
            }
            let j = gs.partition_point(|&g| g <= target).clamp(1, m) - 1;
            let dt = ts[j + 1] - ts[j];
            let hermite = |t: f64| {
                let s = (t - ts[j]) / dt;
                let (s2, s3) = (s * s, s * s * s);
                (2.0 * s3 - 3.0 * s2 + 1.0) * gs[j]
                    + (s3 - 2.0 * s2 + s) * dt * hs[j]
                    + (-2.0 * s3 + 3.0 * s2) * gs[j + 1]
                    + (s3 - s2) * dt * hs[j + 1]
            };
            let (a, b) = bisect(|t| hermite(t) - target, ts[j], ts[j + 1], 1e-14 * dt);
            let t = 0.5 * (a + b);
            ep.g(k.w0 + t * t)
        })
        .collect()
}

const RECONSTRUCT_PANELS: usize = 2000;

/// Multiuser efficiency in the limit `L, W -> inf`, `W/L -> 0`: the right
/// state while its free energy is the lower one, the left state afterwards.
pub fn asymptotic_me(beta: f64, sigma_n_sq: f64) -> Result<f64> {
    let set = uncoupled_fixed_points(beta, sigma_n_sq)?;
    if !set.is_bistable() {
        return Ok((sigma_n_sq * set.largest()).min(1.0));
    }
    let (s_l, s_r) = (set.smallest(), set.largest());
    if free_energy(s_l, beta, sigma_n_sq) >= free_energy(s_r, beta, sigma_n_sq) {
        return Ok((sigma_n_sq * s_r).min(1.0));
    }
    // Trapped-branch limit: the left landmark mapped back through g^{-1} and xi^{-1}.
    let ep = build_effective_potential(beta, sigma_n_sq)?;
    Ok(ep.efficiency(ep.u_l))
}
