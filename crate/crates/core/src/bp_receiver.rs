//! Iterative multiuser detection on the factor graph.
//!
//! Messages are LLRs `ln p(+1)/p(-1)`. The sum step is either exact
//! marginalization over the `2^(r-1)` neighbor configurations or the Gaussian
//! approximation of the cavity interference; the product step sums incoming
//! LLRs. Both run on a flooding schedule.

use std::io::Write;

use crate::ensemble::FactorGraph;
use crate::system_model::TransmissionBlock;
use crate::{Error, Result};

pub const DEFAULT_LLR_CLAMP: f64 = 50.0;
pub const DEFAULT_MAX_EXACT_DEGREE: usize = 14;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumRule {
    Exact,
    Gaussian,
}

#[derive(Debug, Clone)]
pub struct DetectorOptions {
    pub iterations: usize,
    pub llr_clamp: f64,
    pub max_exact_degree: usize,
    /// Accumulate v2f LLR moments over edges whose symbol is +1.
    pub collect_llr_stats: bool,
    /// Keep the hard decisions of every iteration.
    pub record_decisions: bool,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            iterations: 40,
            llr_clamp: DEFAULT_LLR_CLAMP,
            max_exact_degree: DEFAULT_MAX_EXACT_DEGREE,
            collect_llr_stats: false,
            record_decisions: false,
        }
    }
}

/// Per-edge messages and per-symbol marginal LLRs.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub f2v: Vec<f64>,
    pub v2f: Vec<f64>,
    pub marginals: Vec<f64>,
    pub iteration: usize,
}

/// Symbol moments seen by each function node under the Gaussian approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaMomentState {
    pub edge_mean: Vec<f64>,
    pub edge_var: Vec<f64>,
    /// `sum_e a_e E[b_e]` per function node.
    pub fn_mean: Vec<f64>,
    /// `sum_e a_e^2 (1 - E[b_e]^2)` per function node.
    pub fn_var: Vec<f64>,
}

impl GaMomentState {
    pub fn from_messages(graph: &FactorGraph, v2f: &[f64]) -> Self {
        let edge_mean: Vec<f64> = v2f.iter().map(|&l| (0.5 * l).tanh()).collect();
        let edge_var: Vec<f64> = edge_mean.iter().map(|m| 1.0 - m * m).collect();
        let mut fn_mean = vec![0.0; graph.num_fns()];
        let mut fn_var = vec![0.0; graph.num_fns()];
        for f in 0..graph.num_fns() {
            for e in graph.fn_edges(f) {
                let a = graph.edge_gain[e];
                fn_mean[f] += a * edge_mean[e];
                fn_var[f] += a * a * edge_var[e];
            }
        }
        GaMomentState { edge_mean, edge_var, fn_mean, fn_var }
    }

    /// Cavity mean and variance of the interference seen by edge `e`.
    pub fn cavity(&self, graph: &FactorGraph, e: usize) -> (f64, f64) {
        let f = graph.edge_fn[e] as usize;
        let a = graph.edge_gain[e];
        let mean = self.fn_mean[f] - a * self.edge_mean[e];
        let var = (self.fn_var[f] - a * a * self.edge_var[e]).max(0.0);
        (mean, var)
    }
}

/// Running count, sum and sum of squares.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LlrMoments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl LlrMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &LlrMoments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }
}

/// Errors and statistics after one iteration, per coupled position `l'`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub bit_errors: Vec<u64>,
    pub bits: Vec<u64>,
    /// Empty unless statistics were requested.
    pub llr: Vec<LlrMoments>,
    pub decisions: Option<Vec<i8>>,
}

/// Outcome of one detection run; `records[i]` describes iteration `i`
/// (record 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub records: Vec<IterationRecord>,
    pub marginals: Vec<f64>,
}

impl DetectionReport {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("report has the initial record")
    }

    /// Adds the counts of `other` (same shape) into `self`; decisions and
    /// marginals are dropped.
    pub fn accumulate(&mut self, other: &DetectionReport) -> Result<()> {
        if self.records.len() != other.records.len() {
            return Err(Error::DimensionMismatch {
                what: "report iterations",
                expected: self.records.len(),
                actual: other.records.len(),
            });
        }
        for (a, b) in self.records.iter_mut().zip(&other.records) {
            for (x, y) in a.bit_errors.iter_mut().zip(&b.bit_errors) {
                *x += y;
            }
            for (x, y) in a.bits.iter_mut().zip(&b.bits) {
                *x += y;
            }
            if a.llr.is_empty() {
                a.llr = b.llr.clone();
            } else {
                for (x, y) in a.llr.iter_mut().zip(&b.llr) {
                    x.merge(y);
                }
            }
            a.decisions = None;
        }
        self.marginals.clear();
        Ok(())
    }

    /// CSV with columns `iteration, position, bit_errors, bits,
    /// empirical_llr_mean, empirical_llr_var`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "position", "bit_errors", "bits", "empirical_llr_mean", "empirical_llr_var"])
            .map_err(csv_err)?;
        for rec in &self.records {
            for p in 0..rec.bits.len() {
                let (m, v) = rec.llr.get(p).map_or((f64::NAN, f64::NAN), |s| (s.mean(), s.variance()));
                w.write_record([
                    rec.iteration.to_string(),
                    p.to_string(),
                    rec.bit_errors[p].to_string(),
                    rec.bits[p].to_string(),
                    format!("{m:.10e}"),
                    format!("{v:.10e}"),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// A BP run in progress.
pub struct BpDetector<'a> {
    graph: &'a FactorGraph,
    block: &'a TransmissionBlock,
    rule: SumRule,
    options: DetectorOptions,
    state: MessageState,
    known: Vec<bool>,
    noise: f64,
    tie_parity: bool,
    soft: Vec<f64>,
}

impl<'a> BpDetector<'a> {
    pub fn new(
        graph: &'a FactorGraph,
        block: &'a TransmissionBlock,
        rule: SumRule,
        options: DetectorOptions,
    ) -> Result<Self> {
        if block.symbols.len() != graph.num_vars() {
            return Err(Error::DimensionMismatch { what: "symbols", expected: graph.num_vars(), actual: block.symbols.len() });
        }
        if block.received.len() != graph.num_fns() {
            return Err(Error::DimensionMismatch {
                what: "received chips",
                expected: graph.num_fns(),
                actual: block.received.len(),
            });
        }
        if rule == SumRule::Exact {
            let degree = (0..graph.num_fns()).map(|f| graph.fn_edges(f).len()).max().unwrap_or(0);
            if degree > options.max_exact_degree {
                return Err(Error::ComplexityRefused { degree, limit: options.max_exact_degree });
            }
        }
        let known: Vec<bool> = (0..graph.num_vars()).map(|v| graph.config.is_known_position(graph.var_position(v))).collect();
        let clamp = options.llr_clamp;
        let mut state = MessageState {
            f2v: vec![0.0; graph.num_edges()],
            v2f: vec![0.0; graph.num_edges()],
            marginals: vec![0.0; graph.num_vars()],
            iteration: 0,
        };
        for (v, &kn) in known.iter().enumerate() {
            if kn {
                let fixed = block.symbols[v] as f64 * clamp;
                state.marginals[v] = fixed;
                for &e in graph.var_edges(v) {
                    state.v2f[e as usize] = fixed;
                }
            }
        }
        let noise = block.noise_variance.max(VARIANCE_FLOOR);
        Ok(BpDetector { graph, block, rule, options, state, known, noise, tie_parity: false, soft: vec![0.0; graph.num_edges()] })
    }

    pub fn state(&self) -> &MessageState {
        &self.state
    }

    /// One flooding iteration: all sum steps, then all product steps.
    pub fn iterate(&mut self) {
        match self.rule {
            SumRule::Exact => self.exact_sum_step(),
            SumRule::Gaussian => self.gaussian_sum_step(),
        }
        self.product_step();
        self.state.iteration += 1;
    }

    fn exact_sum_step(&mut self) {
        let g = self.graph;
        let clamp = self.options.llr_clamp;
        let inv2s = 0.5 / self.noise;
        let mut gains = Vec::new();
        let mut half_llr = Vec::new();
        for f in 0..g.num_fns() {
            let edges = g.fn_edges(f);
            let y = self.block.received[f];
            for j in edges.clone() {
                gains.clear();
                half_llr.clear();
                for e in edges.clone() {
                    if e != j {
                        gains.push(g.edge_gain[e]);
                        half_llr.push(0.5 * self.state.v2f[e]);
                    }
                }
                let a = g.edge_gain[j];
                // Gray-code walk over the other symbols, starting from all -1.
                let mut s: f64 = -gains.iter().sum::<f64>();
                let mut p: f64 = -half_llr.iter().sum::<f64>();
                let (mut max_p, mut acc_p) = (f64::NEG_INFINITY, 0.0);
                let (mut max_m, mut acc_m) = (f64::NEG_INFINITY, 0.0);
                let mut bits: u64 = 0;
                let configs = 1u64 << gains.len();
                for t in 0..configs {
                    if t > 0 {
                        let k = t.trailing_zeros() as usize;
                        bits ^= 1 << k;
                        if bits & (1 << k) != 0 {
                            s += 2.0 * gains[k];
                            p += 2.0 * half_llr[k];
                        } else {
                            s -= 2.0 * gains[k];
                            p -= 2.0 * half_llr[k];
                        }
                    }
                    let rp = y - s - a;
                    let rm = y - s + a;
                    stream_lse(&mut max_p, &mut acc_p, p - rp * rp * inv2s);
                    stream_lse(&mut max_m, &mut acc_m, p - rm * rm * inv2s);
                }
                let llr = (max_p + acc_p.ln()) - (max_m + acc_m.ln());
                self.state.f2v[j] = llr.clamp(-clamp, clamp);
            }
        }
    }

    fn gaussian_sum_step(&mut self) {
        let g = self.graph;
        let clamp = self.options.llr_clamp;
        for (m, &l) in self.soft.iter_mut().zip(&self.state.v2f) {
            *m = soft_bit(l);
        }
        for f in 0..g.num_fns() {
            let edges = g.fn_edges(f);
            let gains = &g.edge_gain[edges.clone()];
            let soft = &self.soft[edges.clone()];
            let (mut mean, mut var) = (0.0, 0.0);
            for (&a, &m) in gains.iter().zip(soft) {
                mean += a * m;
                var += a * a * (1.0 - m * m);
            }
            let y = self.block.received[f];
            for ((out, &a), &m) in self.state.f2v[edges].iter_mut().zip(gains).zip(soft) {
                let mu = mean - a * m;
                let v = (var - a * a * (1.0 - m * m)).max(0.0);
                *out = (2.0 * a * (y - mu) / (v + self.noise)).clamp(-clamp, clamp);
            }
        }
    }

    fn product_step(&mut self) {
        let g = self.graph;
        let clamp = self.options.llr_clamp;
        for v in 0..g.num_vars() {
            if self.known[v] {
                continue;
            }
            let edges = g.var_edges(v);
            let total: f64 = edges.iter().map(|&e| self.state.f2v[e as usize]).sum();
            self.state.marginals[v] = total.clamp(-clamp, clamp);
            for &e in edges {
                let e = e as usize;
                self.state.v2f[e] = (total - self.state.f2v[e]).clamp(-clamp, clamp);
            }
        }
    }

    fn record(&mut self) -> IterationRecord {
        let g = self.graph;
        let positions = g.config.l;
        let mut bit_errors = vec![0u64; positions];
        let mut bits = vec![0u64; positions];
        let mut decisions = self.options.record_decisions.then(|| Vec::with_capacity(g.num_vars()));
        for v in 0..g.num_vars() {
            let m = self.state.marginals[v];
            let truth = self.block.symbols[v];
            let decision: i8 = if m > 0.0 {
                1
            } else if m < 0.0 {
                -1
            } else {
                // Ties alternate between wrong and right.
                self.tie_parity = !self.tie_parity;
                if self.tie_parity {
                    -truth
                } else {
                    truth
                }
            };
            if let Some(d) = decisions.as_mut() {
                d.push(decision);
            }
            if self.known[v] {
                continue;
            }
            let p = g.var_position(v);
            bits[p] += 1;
            if decision != truth {
                bit_errors[p] += 1;
            }
        }
        let mut llr = Vec::new();
        if self.options.collect_llr_stats {
            llr = vec![LlrMoments::default(); positions];
            for e in 0..g.num_edges() {
                let v = g.edge_var[e] as usize;
                if !self.known[v] && self.block.symbols[v] == 1 {
                    llr[g.var_position(v)].push(self.state.v2f[e]);
                }
            }
        }
        IterationRecord { iteration: self.state.iteration, bit_errors, bits, llr, decisions }
    }

    /// Runs the configured number of iterations and reports every iteration.
    pub fn run(mut self) -> DetectionReport {
        let mut records = Vec::with_capacity(self.options.iterations + 1);
        records.push(self.record());
        let mut previous = self.state.v2f.clone();
        while records.len() <= self.options.iterations {
            self.iterate();
            records.push(self.record());
            // A bitwise fixed point without tied marginals repeats its record.
            if self.state.v2f == previous && self.state.marginals.iter().all(|&m| m != 0.0) {
                let last = records.last().expect("nonempty").clone();
                while records.len() <= self.options.iterations {
                    let mut r = last.clone();
                    r.iteration = records.len();
                    records.push(r);
                }
                self.state.iteration = self.options.iterations;
                break;
            }
            previous.copy_from_slice(&self.state.v2f);
        }
        DetectionReport { records, marginals: self.state.marginals }
    }
}

/// `tanh(l/2)`.
#[inline]
fn soft_bit(l: f64) -> f64 {
    let e = (-l.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(l)
}

#[inline]
fn stream_lse(max: &mut f64, acc: &mut f64, t: f64) {
    if t > *max {
        *acc = *acc * (*max - t).exp() + 1.0;
        *max = t;
    } else {
        *acc += (t - *max).exp();
    }
}

pub fn detect(
    graph: &FactorGraph,
    block: &TransmissionBlock,
    rule: SumRule,
    options: &DetectorOptions,
) -> Result<DetectionReport> {
    Ok(BpDetector::new(graph, block, rule, options.clone())?.run())
}

/// Exact BP with default options and `iters` iterations.
pub fn exact_bp_detect(graph: &FactorGraph, block: &TransmissionBlock, iters: usize) -> Result<DetectionReport> {
    detect(graph, block, SumRule::Exact, &DetectorOptions { iterations: iters, ..Default::default() })
}

/// Gaussian-approximation BP with default options and `iters` iterations.
pub fn ga_bp_detect(graph: &FactorGraph, block: &TransmissionBlock, iters: usize) -> Result<DetectionReport> {
    detect(graph, block, SumRule::Gaussian, &DetectorOptions { iterations: iters, ..Default::default() })
}

/// Conditional v2f LLR moments per iteration and position, pooled over blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrStatistics {
    /// `moments[i][l']`.
    pub moments: Vec<Vec<LlrMoments>>,
}

impl LlrStatistics {
    pub fn merge(&mut self, other: &LlrStatistics) {
        if self.moments.is_empty() {
            self.moments = other.moments.clone();
            return;
        }
        for (a, b) in self.moments.iter_mut().zip(&other.moments) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    /// Moments pooled over all positions at iteration `i`.
    pub fn pooled(&self, i: usize) -> LlrMoments {
        let mut m = LlrMoments::default();
        for x in &self.moments[i] {
            m.merge(x);
        }
        m
    }
}

/// Runs GA-BP on every block and pools the v2f LLRs of edges carrying `b = +1`.
pub fn measure_llr_statistics(
    graph: &FactorGraph,
    blocks: &[TransmissionBlock],
    iters: usize,
) -> Result<LlrStatistics> {
    let options = DetectorOptions { iterations: iters, collect_llr_stats: true, ..Default::default() };
    let mut stats = LlrStatistics { moments: Vec::new() };
    for block in blocks {
        let report = detect(graph, block, SumRule::Gaussian, &options)?;
        let one = LlrStatistics { moments: report.records.into_iter().map(|r| r.llr).collect() };
        stats.merge(&one);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{quasi_regular_graph, sample_quasi_regular, to_factor_graph, CoupledSpreadingMatrix, SystemConfig};
    use crate::system_model::{random_symbols, transmit_on_graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn single_edge(sign: i8, y: f64, sigma: f64) -> (FactorGraph, TransmissionBlock) {
        let cfg = SystemConfig { k: 1, n: 1, n_init: Some(1), r: 1, l: 1, w: 0, sigma_n_sq: sigma };
        let m = CoupledSpreadingMatrix::from_signed_entries(cfg, &[(0, 0, sign)]).unwrap();
        let g = to_factor_graph(&m);
        let blk = TransmissionBlock { config: cfg, symbols: vec![1], received: vec![y], noise_variance: sigma };
        (g, blk)
    }

    #[test]
    fn single_edge_is_scalar_posterior() {
        for rule in [SumRule::Exact, SumRule::Gaussian] {
            let (g, blk) = single_edge(-1, 0.37, 0.5);
            let opts = DetectorOptions { iterations: 1, ..Default::default() };
            let rep = detect(&g, &blk, rule, &opts).unwrap();
            let c_bar = 1.0;
            let expected = 2.0 * -1.0 * 0.37 / (c_bar * 0.5);
            assert!((rep.marginals[0] - expected).abs() < 1e-12, "{rule:?}");
        }
    }

    #[test]
    fn zero_iterations_leave_uniform_marginals() {
        let m = sample_quasi_regular(8, 6, 2, 1).unwrap();
        let g = quasi_regular_graph(&m, 0.1);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let b = random_symbols(8, &mut rng);
        let blk = transmit_on_graph(&g, &b, 0.1, &mut rng).unwrap();
        let rep = exact_bp_detect(&g, &blk, 0).unwrap();
        assert!(rep.marginals.iter().all(|&x| x == 0.0));
        assert_eq!(rep.records.len(), 1);
        // Ties alternate: exactly half of the 8 bits count as errors.
        assert_eq!(rep.records[0].bit_errors[0], 4);
    }

    #[test]
    fn refuses_high_degree_exact() {
        let m = sample_quasi_regular(64, 64, 16, 0).unwrap();
        let g = quasi_regular_graph(&m, 0.1);
        let b = vec![1i8; 64];
        let blk = transmit_on_graph(&g, &b, 0.1, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(exact_bp_detect(&g, &blk, 1), Err(Error::ComplexityRefused { degree: 16, limit: 14 })));
        assert!(ga_bp_detect(&g, &blk, 1).is_ok());
    }

    #[test]
    fn ga_with_zero_messages_uses_full_cavity_variance() {
        let m = sample_quasi_regular(12, 6, 4, 2).unwrap();
        let g = quasi_regular_graph(&m, 0.1);
        let zeros = vec![0.0; g.num_edges()];
        let st = GaMomentState::from_messages(&g, &zeros);
        for e in 0..g.num_edges() {
            let (mu, v) = st.cavity(&g, e);
            let f = g.edge_fn[e] as usize;
            let expected: f64 = g.fn_edges(f).filter(|&x| x != e).map(|x| g.edge_gain[x].powi(2)).sum();
            assert_eq!(mu, 0.0);
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn ga_two_edge_hand_evaluation() {
        // One function node, two users, gains a1 = +g, a2 = -g with g = 1/sqrt(c_bar).
        let cfg = SystemConfig { k: 2, n: 1, n_init: Some(1), r: 2, l: 1, w: 0, sigma_n_sq: 0.2 };
        let m = CoupledSpreadingMatrix::from_signed_entries(cfg, &[(0, 0, 1), (0, 1, -1)]).unwrap();
        let g = to_factor_graph(&m);
        let gain = 1.0 / (2.0f64 * 1.0 / 2.0).sqrt();
        let y = 0.8;
        let blk = TransmissionBlock { config: cfg, symbols: vec![1, 1], received: vec![y], noise_variance: 0.2 };
        let mut det = BpDetector::new(&g, &blk, SumRule::Gaussian, DetectorOptions::default()).unwrap();
        det.iterate();
        // Iteration 1: cavity of each edge is the other user with mean 0, variance gain^2.
        let l1 = 2.0 * gain * y / (gain * gain + 0.2);
        let l2 = 2.0 * -gain * y / (gain * gain + 0.2);
        assert!((det.state().f2v[0] - l1).abs() < 1e-12);
        assert!((det.state().f2v[1] - l2).abs() < 1e-12);
        // Each user has one edge, so v2f stays 0 and the next iteration repeats.
        det.iterate();
        assert!((det.state().f2v[0] - l1).abs() < 1e-12);
        // Hand evaluation with nonzero prior on user 2.
        let mut det = BpDetector::new(&g, &blk, SumRule::Gaussian, DetectorOptions::default()).unwrap();
        det.state.v2f[1] = 1.3;
        det.gaussian_sum_step();
        let m2 = (0.65f64).tanh();
        let mu = -gain * m2;
        let v = gain * gain * (1.0 - m2 * m2);
        assert!((det.state().f2v[0] - 2.0 * gain * (y - mu) / (v + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_equivariance() {
        let cfg = SystemConfig { k: 6, n: 4, n_init: Some(4), r: 4, l: 3, w: 1, sigma_n_sq: 0.3 };
        let m = crate::ensemble::sample_coupled(&cfg, 4).unwrap();
        let g = to_factor_graph(&m);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let b = random_symbols(18, &mut rng);
        let blk = transmit_on_graph(&g, &b, 0.3, &mut rng).unwrap();
        let neg = TransmissionBlock {
            symbols: blk.symbols.iter().map(|x| -x).collect(),
            received: blk.received.iter().map(|x| -x).collect(),
            ..blk.clone()
        };
        let ga = ga_bp_detect(&g, &blk, 6).unwrap();
        let ga_neg = ga_bp_detect(&g, &neg, 6).unwrap();
        for (x, y) in ga.marginals.iter().zip(&ga_neg.marginals) {
            assert_eq!(*x, -*y);
        }
        let ex = exact_bp_detect(&g, &blk, 6).unwrap();
        let ex_neg = exact_bp_detect(&g, &neg, 6).unwrap();
        for (x, y) in ex.marginals.iter().zip(&ex_neg.marginals) {
            assert!((x + y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn known_symbols_are_clamped_and_excluded() {
        let cfg = SystemConfig { k: 4, n: 4, n_init: None, r: 4, l: 3, w: 1, sigma_n_sq: 0.1 };
        let m = crate::ensemble::sample_coupled(&cfg, 1).unwrap();
        let g = to_factor_graph(&m);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let b = random_symbols(12, &mut rng);
        let blk = transmit_on_graph(&g, &b, 0.1, &mut rng).unwrap();
        let rep = ga_bp_detect(&g, &blk, 3).unwrap();
        assert_eq!(rep.final_record().bits, vec![0, 4, 4]);
        for v in 0..4 {
            assert_eq!(rep.marginals[v], b[v] as f64 * DEFAULT_LLR_CLAMP);
        }
    }

    #[test]
    fn llr_statistics_start_at_zero_and_csv_has_header() {
        let m = sample_quasi_regular(40, 40, 4, 3).unwrap();
        let g = quasi_regular_graph(&m, 0.1);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let b = random_symbols(40, &mut rng);
        let blk = transmit_on_graph(&g, &b, 0.1, &mut rng).unwrap();
        let st = measure_llr_statistics(&g, std::slice::from_ref(&blk), 2).unwrap();
        assert_eq!(st.pooled(0).mean(), 0.0);
        assert_eq!(st.pooled(0).variance(), 0.0);
        assert!(st.pooled(2).mean() > 0.0);
        let rep = detect(&g, &blk, SumRule::Gaussian, &DetectorOptions { iterations: 2, collect_llr_stats: true, ..Default::default() }).unwrap();
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iteration,position,bit_errors,bits,empirical_llr_mean,empirical_llr_var"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn soft_bit_is_half_angle_tanh() {
        for &l in &[-60.0, -3.1, -1e-9, 0.0, 1e-9, 0.4, 7.0, 60.0] {
            assert!((soft_bit(l) - (0.5 * l).tanh()).abs() < 1e-15, "{l}");
        }
    }

    #[test]
    fn fixed_point_shortcut_matches_plain_iteration() {
        let m = sample_quasi_regular(60, 120, 4, 5).unwrap();
        let g = quasi_regular_graph(&m, 0.1);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let b = random_symbols(60, &mut rng);
        let blk = transmit_on_graph(&g, &b, 0.1, &mut rng).unwrap();
        let opts = DetectorOptions { iterations: 300, ..Default::default() };
        let rep = detect(&g, &blk, SumRule::Gaussian, &opts).unwrap();
        let mut det = BpDetector::new(&g, &blk, SumRule::Gaussian, opts).unwrap();
        let mut records = vec![det.record()];
        for _ in 0..300 {
            det.iterate();
            records.push(det.record());
        }
        assert_eq!(rep.records, records);
        assert_eq!(rep.marginals, det.state().marginals);
    }
}
