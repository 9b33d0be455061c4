//! Spatially-coupled sparsely-spread CDMA (SC-SCDMA).
//!
//! The crate covers the whole analysis chain for iterative multiuser
//! detection over sparse spreading:
//!
//! * [`scalar_mmse`]: BPSK-over-AWGN posterior mean, MMSE and mutual information.
//! * [`ensemble`]: quasi-regular and spatially-coupled spreading ensembles and
//!   their factor graphs.
//! * [`system_model`]: one transmission block through the coupled channel.
//! * [`bp_receiver`]: exact and Gaussian-approximated belief propagation.
//! * [`density_evolution`]: coupled density evolution and its fixed points.
//! * [`threshold`]: BP, IO and coupled thresholds, free energy and potential.
//! * [`continuum`]: effective potential and non-uniform stationary profiles.
//! * [`harness`]: experiment configuration, Monte Carlo orchestration and output.

pub mod bp_receiver;
pub mod continuum;
pub mod density_evolution;
pub mod ensemble;
mod error;
pub mod harness;
pub mod numeric;
pub mod scalar_mmse;
pub mod system_model;
pub mod threshold;

pub use error::{Error, Result};

/// Converts an SNR `1/sigma_n^2` given in dB to the noise variance `sigma_n^2`.
pub fn noise_variance_from_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Inverse of [`noise_variance_from_db`].
pub fn snr_db_from_noise_variance(sigma_n_sq: f64) -> f64 {
    -10.0 * sigma_n_sq.log10()
}
