//! Channel probing.
//!
//! Noncoherent probing returns `max(0, |w~^H h| + n)` per codeword, with
//! `w~ = diag(e) w` and `n` real Gaussian. RSS is kept as a linear
//! magnitude; decibel conversions happen only in reporting.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{apply_impairment, inner, ImpairmentVector};
use crate::codebook::{Awv, Codebook};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoundingConfig {
    pub rss_snr_db: f64,
    pub seed: u64,
}

impl Default for SoundingConfig {
    fn default() -> Self {
        Self {
            rss_snr_db: 20.0,
            seed: 0,
        }
    }
}

/// Measured RSS for a sequence of probes, in codebook order.
#[derive(Debug, Clone, PartialEq)]
pub struct RssVector {
    pub values: Vec<f64>,
    /// Probes whose noisy value fell below zero and was clamped.
    pub clamped: usize,
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!(
            "noise standard deviation must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Coherent received symbol `w^H h + n` with unit pilot and circularly
/// symmetric complex Gaussian noise of variance `sigma_n^2`.
pub fn coherent_symbol<R: Rng + ?Sized>(w: &Awv, h: &[Complex64], sigma_n: f64, rng: &mut R) -> Result<Complex64> {
    check_len(w.len(), h.len())?;
    check_sigma(sigma_n)?;
    let scale = sigma_n / std::f64::consts::SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Ok(inner(w, h) + Complex64::new(scale * re, scale * im))
}

fn noisy_magnitude<R: Rng + ?Sized>(clean: f64, sigma: f64, rng: &mut R) -> (f64, bool) {
    let z: f64 = rng.sample(StandardNormal);
    let v = clean + sigma * z;
    if v < 0.0 {
        (0.0, true)
    } else {
        (v, false)
    }
}

/// One noncoherent probe with an already-impaired combiner.
pub fn rss_measure<R: Rng + ?Sized>(w_tilde: &Awv, h: &[Complex64], sigma_rss: f64, rng: &mut R) -> Result<f64> {
    check_len(w_tilde.len(), h.len())?;
    check_sigma(sigma_rss)?;
    Ok(noisy_magnitude(inner(w_tilde, h).norm(), sigma_rss, rng).0)
}

/// Noiseless probe magnitudes `|(diag(e) w_m)^H h|` for every codeword.
pub fn noiseless_rss(codebook: &Codebook, e: &ImpairmentVector, h: &[Complex64]) -> Result<Vec<f64>> {
    check_len(codebook.n_elements, h.len())?;
    codebook
        .codewords
        .iter()
        .map(|w| Ok(inner(&apply_impairment(e, w)?, h).norm()))
        .collect()
}

/// Probe every codeword in order, non-adaptively, from a single RNG stream.
pub fn sound_codebook<R: Rng + ?Sized>(
    codebook: &Codebook,
    e: &ImpairmentVector,
    h: &[Complex64],
    sigma_rss: f64,
    rng: &mut R,
) -> Result<RssVector> {
    check_sigma(sigma_rss)?;
    let clean = noiseless_rss(codebook, e, h)?;
    let mut clamped = 0;
    let values = clean
        .into_iter()
        .map(|c| {
            let (v, hit) = noisy_magnitude(c, sigma_rss, rng);
            clamped += usize::from(hit);
            v
        })
        .collect();
    Ok(RssVector { values, clamped })
}

/// Noise standard deviation giving `mean_m |w~_m^H h|^2 / sigma^2 = 10^(snr/10)`.
pub fn sigma_from_rss_snr(h: &[Complex64], codebook: &Codebook, e: &ImpairmentVector, rss_snr_db: f64) -> Result<f64> {
    if codebook.is_empty() {
        return Err(Error::Empty("calibration codebook".into()));
    }
    let clean = noiseless_rss(codebook, e, h)?;
    let mean_sq = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    if !(mean_sq > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok((mean_sq / 10f64.powf(rss_snr_db / 10.0)).sqrt())
}
