//! Phased-array response, hardware impairment and single-path channels.
//!
//! The receive array is a uniform linear array; element `n` (0-based) of the
//! response toward azimuth `phi` is `exp(j 2 pi n (d/lambda) sin(phi))`.
//! Angles cross the API in degrees and are converted to radians internally.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::Awv;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidConfig(format!(
                "array needs at least 2 elements, got {n_elements}"
            )));
        }
        if !(spacing_over_wavelength > 0.0 && spacing_over_wavelength.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "element spacing must be positive, got {spacing_over_wavelength}"
            )));
        }
        Ok(Self {
            n_elements,
            spacing_over_wavelength,
        })
    }

    /// Half-wavelength ULA.
    pub fn ula(n_elements: usize) -> Result<Self> {
        Self::new(n_elements, 0.5)
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n_elements as f64).sqrt()
    }
}

fn check_angle(angle_deg: f64) -> Result<()> {
    if angle_deg > -90.0 && angle_deg < 90.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("angle {angle_deg} deg outside (-90, 90)")))
    }
}

/// Array response `a(angle)`; every element has unit magnitude.
pub fn array_response(geometry: &ArrayGeometry, angle_deg: f64) -> Result<Vec<Complex64>> {
    check_angle(angle_deg)?;
    let step = 2.0 * std::f64::consts::PI * geometry.spacing_over_wavelength * angle_deg.to_radians().sin();
    Ok((0..geometry.n_elements)
        .map(|n| Complex64::from_polar(1.0, step * n as f64))
        .collect())
}

/// Hermitian inner product `x^H y`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Per-element gain/phase error distribution. Zero standard deviations give
/// the identity impairment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentConfig {
    pub gain_std_db: f64,
    pub phase_std_deg: f64,
    pub seed: u64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            gain_std_db: 1.0,
            phase_std_deg: 10.0,
            seed: 2021,
        }
    }
}

impl ImpairmentConfig {
    pub fn none() -> Self {
        Self {
            gain_std_db: 0.0,
            phase_std_deg: 0.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.gain_std_db == 0.0 && self.phase_std_deg == 0.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.gain_std_db >= 0.0 && self.gain_std_db.is_finite())
            || !(self.phase_std_deg >= 0.0 && self.phase_std_deg.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "impairment standard deviations must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Unknown multiplicative per-element error `e` applied to every receive AWV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentVector {
    pub values: Vec<Complex64>,
    /// Generating configuration, when drawn from one.
    pub config: Option<ImpairmentConfig>,
}

impl ImpairmentVector {
    pub fn identity(n_elements: usize) -> Self {
        Self {
            values: vec![Complex64::new(1.0, 0.0); n_elements],
            config: None,
        }
    }

    pub fn from_values(values: Vec<Complex64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.norm().is_finite() && v.norm() > 0.0)) {
            return Err(Error::Domain(format!(
                "impairment entries must be finite and nonzero, got {bad}"
            )));
        }
        Ok(Self { values, config: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draw `e_n = 10^(g_n/20) exp(j psi_n)` with independent Gaussian dB gain
/// and Gaussian phase per element.
pub fn draw_impairment(config: &ImpairmentConfig, geometry: &ArrayGeometry) -> Result<ImpairmentVector> {
    config.validate()?;
    let mut rng = seed::rng_at(config.seed, &[0x1A11]);
    let phase_std = config.phase_std_deg.to_radians();
    let values = (0..geometry.n_elements)
        .map(|_| {
            let zg: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            let gain_db = config.gain_std_db * zg;
            let phase = phase_std * zp;
            Complex64::from_polar(10f64.powf(gain_db / 20.0), phase)
        })
        .collect();
    Ok(ImpairmentVector {
        values,
        config: Some(*config),
    })
}

/// `diag(e) w`.
pub fn apply_impairment(e: &ImpairmentVector, w: &Awv) -> Result<Awv> {
    if e.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: e.len(),
            found: w.len(),
        });
    }
    Ok(Awv(e.values.iter().zip(w.iter()).map(|(a, b)| a * b).collect()))
}

/// Single dominant path `h = alpha a(aoa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub aoa_deg: f64,
    pub alpha: Complex64,
}

pub fn make_channel(aoa_deg: f64, alpha: Complex64) -> Result<ChannelRealization> {
    check_angle(aoa_deg)?;
    if !(alpha.norm() > 0.0 && alpha.norm().is_finite()) {
        return Err(Error::Domain(format!("channel gain must be nonzero, got {alpha}")));
    }
    Ok(ChannelRealization { aoa_deg, alpha })
}

pub fn channel_vector(ch: &ChannelRealization, geometry: &ArrayGeometry) -> Result<Vec<Complex64>> {
    Ok(array_response(geometry, ch.aoa_deg)?
        .into_iter()
        .map(|a| ch.alpha * a)
        .collect())
}

/// Power pattern `|w~^H a(theta)|^2` over an angle grid.
pub fn beam_pattern(w_tilde: &Awv, geometry: &ArrayGeometry, angles_deg: &[f64]) -> Result<Vec<f64>> {
    if angles_deg.is_empty() {
        return Err(Error::Empty("beam pattern angle grid".into()));
    }
    if w_tilde.len() != geometry.n_elements {
        return Err(Error::LengthMismatch {
            expected: geometry.n_elements,
            found: w_tilde.len(),
        });
    }
    angles_deg
        .iter()
        .map(|&theta| Ok(inner(w_tilde, &array_response(geometry, theta)?).norm_sqr()))
        .collect()
}
