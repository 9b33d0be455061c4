//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, lists are comma separated.
//! Unknown or repeated keys are errors. Every key has a default; see
//! [`ExperimentSpec::echo`] for the resolved set.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::bp_receiver::{SumRule, DEFAULT_MAX_EXACT_DEGREE};
use crate::density_evolution::DeOptions;
use crate::ensemble::SystemConfig;
use crate::{noise_variance_from_db, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    De,
    Threshold,
    Ber,
    Continuum,
    ValidateLlr,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::De => "de",
            ExperimentKind::Threshold => "threshold",
            ExperimentKind::Ber => "ber",
            ExperimentKind::Continuum => "continuum",
            ExperimentKind::ValidateLlr => "validate-llr",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "de" => ExperimentKind::De,
            "threshold" => ExperimentKind::Threshold,
            "ber" => ExperimentKind::Ber,
            "continuum" => ExperimentKind::Continuum,
            "validate-llr" => ExperimentKind::ValidateLlr,
            _ => return Err(Error::InvalidConfig(format!("unknown experiment kind '{s}'"))),
        })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which coupled positions a BER run counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionChoice {
    Middle,
    All,
    Index(usize),
}

impl PositionChoice {
    /// Position index for `L` positions, `None` for all of them.
    pub fn resolve(&self, l: usize) -> Option<usize> {
        match *self {
            PositionChoice::Middle => Some(l / 2),
            PositionChoice::All => None,
            PositionChoice::Index(i) => Some(i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// BP, IO and potential thresholds of the single system.
    Uncoupled,
    /// Coupled BP thresholds over the `(L, W)` grid.
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub trials: usize,
    /// Sweep over SNR `1/sigma_n^2` in dB; `inf` means noiseless.
    pub snr_db: Vec<f64>,

    pub k: usize,
    pub n: usize,
    /// `None` encodes `beta_init = 0` (known initialization symbols).
    pub n_init: Option<usize>,
    pub r: usize,
    pub l: usize,
    pub w: usize,

    /// Loads for DE runs.
    pub beta: Vec<f64>,
    pub beta_init: f64,

    pub iterations: usize,
    pub detector: SumRule,
    pub max_exact_degree: usize,
    pub position: PositionChoice,

    pub de: DeOptions,
    pub tol_beta: f64,
    pub eta_gap: f64,
    pub scan_step: f64,

    pub threshold_mode: ThresholdMode,
    pub l_values: Vec<usize>,
    pub w_values: Vec<usize>,

    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_points: usize,
    pub gamma: Vec<f64>,
    pub profile_beta: f64,
    pub profile_samples: usize,
}

const KEYS: &[&str] = &[
    "kind",
    "seed",
    "trials",
    "snr_db",
    "k",
    "n",
    "n_init",
    "r",
    "l",
    "w",
    "beta",
    "beta_init",
    "iterations",
    "detector",
    "max_exact_degree",
    "position",
    "de_tol",
    "de_max_iters",
    "dump_every",
    "tol_beta",
    "eta_gap",
    "scan_step",
    "mode",
    "l_values",
    "w_values",
    "beta_min",
    "beta_max",
    "beta_points",
    "gamma",
    "profile_beta",
    "profile_samples",
];

/// Splits config text into key/value pairs.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
        let key = key.trim();
        check_key(key)?;
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("line {}: key '{key}' repeated", i + 1)));
        }
    }
    Ok(map)
}

pub fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("unknown key '{key}'")))
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::InvalidConfig(format!("cannot parse {key} = '{value}'"))
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| scalar(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let de = DeOptions::default();
        ExperimentSpec {
            kind,
            base_seed: 1,
            trials: 1,
            snr_db: vec![10.0],
            k: 1000,
            n: 1000,
            n_init: None,
            r: 8,
            l: 1,
            w: 0,
            beta: vec![1.0],
            beta_init: 1.0,
            iterations: 40,
            detector: SumRule::Gaussian,
            max_exact_degree: DEFAULT_MAX_EXACT_DEGREE,
            position: PositionChoice::All,
            de,
            tol_beta: 1e-5,
            eta_gap: 1e-3,
            scan_step: 0.05,
            threshold_mode: ThresholdMode::Uncoupled,
            l_values: vec![16, 32, 64, 128],
            w_values: vec![1, 2, 3, 4],
            beta_min: 1.9,
            beta_max: 2.05,
            beta_points: 16,
            gamma: Vec::new(),
            profile_beta: 1.99,
            profile_samples: 401,
        }
    }

    /// Parses a whole config file; `kind` must be present.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(None, &parse_key_values(text)?)
    }

    /// Builds a spec from key/value pairs. `kind` overrides the `kind` key,
    /// which must agree with it when both are given.
    pub fn from_map(kind: Option<ExperimentKind>, map: &BTreeMap<String, String>) -> Result<Self> {
        let file_kind = map.get("kind").map(|s| s.parse::<ExperimentKind>()).transpose()?;
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidConfig(format!("config is for '{b}', not '{a}'")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::InvalidConfig("missing key 'kind'".into())),
        };
        let mut s = Self::defaults(kind);
        let mut position = None;
        for (key, v) in map {
            let v = v.as_str();
            match key.as_str() {
                "kind" => {}
                "seed" => s.base_seed = scalar(key, v)?,
                "trials" => s.trials = scalar(key, v)?,
                "snr_db" => s.snr_db = list(key, v)?,
                "k" => s.k = scalar(key, v)?,
                "n" => s.n = scalar(key, v)?,
                "n_init" => s.n_init = if v == "inf" { None } else { Some(scalar(key, v)?) },
                "r" => s.r = scalar(key, v)?,
                "l" => s.l = scalar(key, v)?,
                "w" => s.w = scalar(key, v)?,
                "beta" => s.beta = list(key, v)?,
                "beta_init" => s.beta_init = scalar(key, v)?,
                "iterations" => s.iterations = scalar(key, v)?,
                "detector" => {
                    s.detector = match v {
                        "ga" => SumRule::Gaussian,
                        "exact" => SumRule::Exact,
                        _ => return Err(bad(key, v)),
                    }
                }
                "max_exact_degree" => s.max_exact_degree = scalar(key, v)?,
                "position" => {
                    position = Some(match v {
                        "middle" => PositionChoice::Middle,
                        "all" => PositionChoice::All,
                        _ => PositionChoice::Index(scalar(key, v)?),
                    })
                }
                "de_tol" => s.de.tol = scalar(key, v)?,
                "de_max_iters" => s.de.max_iters = scalar(key, v)?,
                "dump_every" => s.de.dump_every = scalar(key, v)?,
                "tol_beta" => s.tol_beta = scalar(key, v)?,
                "eta_gap" => s.eta_gap = scalar(key, v)?,
                "scan_step" => s.scan_step = scalar(key, v)?,
                "mode" => {
                    s.threshold_mode = match v {
                        "uncoupled" => ThresholdMode::Uncoupled,
                        "table" => ThresholdMode::Table,
                        _ => return Err(bad(key, v)),
                    }
                }
                "l_values" => s.l_values = list(key, v)?,
                "w_values" => s.w_values = list(key, v)?,
                "beta_min" => s.beta_min = scalar(key, v)?,
                "beta_max" => s.beta_max = scalar(key, v)?,
                "beta_points" => s.beta_points = scalar(key, v)?,
                "gamma" => s.gamma = list(key, v)?,
                "profile_beta" => s.profile_beta = scalar(key, v)?,
                "profile_samples" => s.profile_samples = scalar(key, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
            }
        }
        s.position = position.unwrap_or(if s.l > 1 { PositionChoice::Middle } else { PositionChoice::All });
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|x| x.is_nan()) {
            return fail("snr_db must be a nonempty list of numbers");
        }
        if self.beta.is_empty() || self.beta.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return fail("beta must be a nonempty list of nonnegative loads");
        }
        if !(self.beta_init >= 0.0 && self.beta_init.is_finite()) {
            return fail("beta_init must be nonnegative");
        }
        if !(self.de.tol > 0.0) || !(self.tol_beta > 0.0) || !(self.eta_gap > 0.0) || !(self.scan_step > 0.0) {
            return fail("de_tol, tol_beta, eta_gap and scan_step must be positive");
        }
        if self.beta_points == 0 || !(self.beta_min <= self.beta_max) || !(self.beta_min > 0.0) {
            return fail("continuum sweep needs 0 < beta_min <= beta_max and beta_points >= 1");
        }
        if self.gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return fail("gamma values must be positive");
        }
        if self.profile_samples < 2 {
            return fail("profile_samples must be at least 2");
        }
        if let PositionChoice::Index(i) = self.position {
            if i >= self.l {
                return fail("position index must be below L");
            }
        }
        if matches!(self.kind, ExperimentKind::Ber | ExperimentKind::ValidateLlr) {
            for &snr in &self.snr_db {
                self.system(snr)?;
            }
        }
        Ok(())
    }

    /// The simulated system at one SNR point.
    pub fn system(&self, snr_db: f64) -> Result<SystemConfig> {
        let cfg = SystemConfig {
            k: self.k,
            n: self.n,
            n_init: self.n_init,
            r: self.r,
            l: self.l,
            w: self.w,
            sigma_n_sq: noise_variance_from_db(snr_db),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Continuum sweep loads, evenly spaced from `beta_min` to `beta_max`.
    pub fn beta_sweep(&self) -> Vec<f64> {
        if self.beta_points == 1 {
            return vec![self.beta_min];
        }
        let step = (self.beta_max - self.beta_min) / (self.beta_points - 1) as f64;
        (0..self.beta_points).map(|i| self.beta_min + step * i as f64).collect()
    }

    /// Every key with its effective value.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("kind", self.kind.to_string());
        put("seed", self.base_seed.to_string());
        put("trials", self.trials.to_string());
        put("snr_db", join(&self.snr_db));
        put("k", self.k.to_string());
        put("n", self.n.to_string());
        put("n_init", self.n_init.map_or("inf".to_string(), |v| v.to_string()));
        put("r", self.r.to_string());
        put("l", self.l.to_string());
        put("w", self.w.to_string());
        put("beta", join(&self.beta));
        put("beta_init", self.beta_init.to_string());
        put("iterations", self.iterations.to_string());
        put("detector", if self.detector == SumRule::Exact { "exact" } else { "ga" }.to_string());
        put("max_exact_degree", self.max_exact_degree.to_string());
        put(
            "position",
            match self.position {
                PositionChoice::Middle => "middle".to_string(),
                PositionChoice::All => "all".to_string(),
                PositionChoice::Index(i) => i.to_string(),
            },
        );
        put("de_tol", self.de.tol.to_string());
        put("de_max_iters", self.de.max_iters.to_string());
        put("dump_every", self.de.dump_every.to_string());
        put("tol_beta", self.tol_beta.to_string());
        put("eta_gap", self.eta_gap.to_string());
        put("scan_step", self.scan_step.to_string());
        put("mode", if self.threshold_mode == ThresholdMode::Table { "table" } else { "uncoupled" }.to_string());
        put("l_values", join(&self.l_values));
        put("w_values", join(&self.w_values));
        put("beta_min", self.beta_min.to_string());
        put("beta_max", self.beta_max.to_string());
        put("beta_points", self.beta_points.to_string());
        put("gamma", join(&self.gamma));
        put("profile_beta", self.profile_beta.to_string());
        put("profile_samples", self.profile_samples.to_string());
        m
    }
}
