//! One SC-SCDMA transmission block: `y = (1/sqrt(W+1)) G b + w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::ensemble::{CoupledSpreadingMatrix, FactorGraph, SystemConfig};
use crate::{Error, Result};

/// Symbols, received chips and noise level of one block.
///
/// `symbols[l' * K + k]` is `b_{k,l'}`; `received` stacks `y_0, ..., y_{L-1}`
/// in global row order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionBlock {
    pub config: SystemConfig,
    pub symbols: Vec<i8>,
    pub received: Vec<f64>,
    pub noise_variance: f64,
}

impl TransmissionBlock {
    /// Received chips of function position `l`.
    pub fn received_at(&self, l: usize) -> &[f64] {
        let start: usize = (0..l).map(|p| self.config.rows_at(p)).sum();
        &self.received[start..start + self.config.rows_at(l)]
    }
}

/// Uniform i.i.d. ±1 symbols.
pub fn random_symbols<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<i8> {
    (0..count).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
}

fn check(config: &SystemConfig, symbols: &[i8], sigma_n_sq: f64) -> Result<()> {
    if symbols.len() != config.total_symbols() {
        return Err(Error::DimensionMismatch { what: "symbols", expected: config.total_symbols(), actual: symbols.len() });
    }
    if symbols.iter().any(|&b| b != 1 && b != -1) {
        return Err(Error::DomainError("symbols must be +1 or -1".into()));
    }
    if !(sigma_n_sq >= 0.0) || !sigma_n_sq.is_finite() {
        return Err(Error::DomainError(format!("noise variance must be finite and nonnegative, got {sigma_n_sq}")));
    }
    Ok(())
}

/// Noise-free chips `(1/sqrt(W+1)) G x` for real-valued `x`.
pub fn noiseless_chips(matrix: &CoupledSpreadingMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let total = matrix.config.total_symbols();
    if x.len() != total {
        return Err(Error::DimensionMismatch { what: "input vector", expected: total, actual: x.len() });
    }
    let mut y = vec![0.0; matrix.config.total_rows()];
    for (row, col, gain) in matrix.global_entries() {
        y[row] += gain * x[col];
    }
    Ok(y)
}

/// Transmits `symbols` through `matrix` with AWGN of variance `sigma_n_sq`.
/// Noise is one seeded stream drawn in global row order (position-major).
pub fn transmit(
    matrix: &CoupledSpreadingMatrix,
    symbols: &[i8],
    sigma_n_sq: f64,
    rng_seed: u64,
) -> Result<TransmissionBlock> {
    check(&matrix.config, symbols, sigma_n_sq)?;
    let x: Vec<f64> = symbols.iter().map(|&b| b as f64).collect();
    let mut received = noiseless_chips(matrix, &x)?;
    add_noise(&mut received, sigma_n_sq, &mut ChaCha20Rng::seed_from_u64(rng_seed));
    Ok(TransmissionBlock { config: matrix.config, symbols: symbols.to_vec(), received, noise_variance: sigma_n_sq })
}

/// Same channel as [`transmit`], driven by the edges of a factor graph and an
/// external generator.
pub fn transmit_on_graph<R: Rng + ?Sized>(
    graph: &FactorGraph,
    symbols: &[i8],
    sigma_n_sq: f64,
    rng: &mut R,
) -> Result<TransmissionBlock> {
    check(&graph.config, symbols, sigma_n_sq)?;
    let mut received = vec![0.0; graph.num_fns()];
    for (f, y) in received.iter_mut().enumerate() {
        *y = graph.fn_edges(f).map(|e| graph.edge_gain[e] * symbols[graph.edge_var[e] as usize] as f64).sum();
    }
    add_noise(&mut received, sigma_n_sq, rng);
    Ok(TransmissionBlock { config: graph.config, symbols: symbols.to_vec(), received, noise_variance: sigma_n_sq })
}

fn add_noise<R: Rng + ?Sized>(y: &mut [f64], sigma_n_sq: f64, rng: &mut R) {
    if sigma_n_sq == 0.0 {
        return;
    }
    let sd = sigma_n_sq.sqrt();
    for v in y.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += sd * g;
    }
}
