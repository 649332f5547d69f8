//! Directional (DFT), pseudo-random (PN) and concatenated codebooks.

use std::ops::Deref;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{array_response, ArrayGeometry};
use crate::{seed, Error, Result};

/// Antenna weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Awv(pub Vec<Complex64>);

impl Deref for Awv {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl Awv {
    pub fn norm(&self) -> f64 {
        crate::array::norm(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Directional,
    Sounding,
    Concatenated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub kind: CodebookKind,
    pub n_elements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_deg: Option<Vec<f64>>,
    pub codewords: Vec<Awv>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// The first `m` codewords.
    pub fn prefix(&self, m: usize) -> Result<Codebook> {
        if m > self.len() {
            return Err(Error::Domain(format!(
                "prefix of length {m} requested from a {}-codeword codebook",
                self.len()
            )));
        }
        Ok(Codebook {
            kind: self.kind,
            n_elements: self.n_elements,
            angles_deg: self.angles_deg.as_ref().map(|a| a[..m].to_vec()),
            codewords: self.codewords[..m].to_vec(),
            seed: self.seed,
        })
    }

    /// Check the structural invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        for w in &self.codewords {
            if w.len() != self.n_elements {
                return Err(Error::LengthMismatch {
                    expected: self.n_elements,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite("codeword entry".into()));
            }
        }
        if let Some(angles) = &self.angles_deg {
            if angles.len() != self.len() {
                return Err(Error::LengthMismatch {
                    expected: self.len(),
                    found: angles.len(),
                });
            }
            if angles.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidConfig(
                    "directional angles must be strictly increasing".into(),
                ));
            }
        } else if self.kind == CodebookKind::Directional {
            return Err(Error::InvalidConfig("directional codebook without angles".into()));
        }
        Ok(())
    }
}

/// `a(angle) / sqrt(N)`, a unit-norm pencil beam.
pub fn steering_codeword(geometry: &ArrayGeometry, angle_deg: f64) -> Result<Awv> {
    let scale = 1.0 / geometry.sqrt_n();
    Ok(Awv(array_response(geometry, angle_deg)?
        .into_iter()
        .map(|a| a * scale)
        .collect()))
}

/// `k` steering beams uniformly spaced in physical angle, endpoints included.
pub fn dft_codebook(geometry: &ArrayGeometry, k: usize, angle_min_deg: f64, angle_max_deg: f64) -> Result<Codebook> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "directional codebook needs K >= 2, got {k}"
        )));
    }
    if !(angle_min_deg < angle_max_deg) {
        return Err(Error::InvalidConfig(format!(
            "angle range [{angle_min_deg}, {angle_max_deg}] is empty"
        )));
    }
    let span = angle_max_deg - angle_min_deg;
    let angles: Vec<f64> = (0..k)
        .map(|i| {
            if i == k - 1 {
                angle_max_deg
            } else {
                angle_min_deg + span * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let codewords = angles
        .iter()
        .map(|&a| steering_codeword(geometry, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(Codebook {
        kind: CodebookKind::Directional,
        n_elements: geometry.n_elements,
        angles_deg: Some(angles),
        codewords,
        seed: None,
    })
}

/// Quarter-turn index in {0, 1, 2, 3} for element `n` of codeword `m`.
///
/// Each (codeword, element) pair gets its own counter-based draw so a
/// codebook is reproducible from the seed alone, independent of generation
/// order.
pub fn pn_phase_index(seed_value: u64, m: usize, n: usize) -> u8 {
    (seed::derive(seed_value, &[m as u64, n as u64]) >> 62) as u8
}

/// `m0` pseudo-random beams: magnitude `1/sqrt(N)`, phase from {0, pi/2, pi, 3pi/2}.
pub fn pn_codebook(geometry: &ArrayGeometry, m0: usize, seed_value: u64) -> Result<Codebook> {
    if m0 == 0 {
        return Err(Error::InvalidConfig(
            "sounding codebook needs at least one codeword".into(),
        ));
    }
    let s = 1.0 / geometry.sqrt_n();
    // Exact quadrature points keep the phases exactly on the 4-point set.
    let quarter = [
        Complex64::new(s, 0.0),
        Complex64::new(0.0, s),
        Complex64::new(-s, 0.0),
        Complex64::new(0.0, -s),
    ];
    let codewords = (0..m0)
        .map(|m| {
            Awv((0..geometry.n_elements)
                .map(|n| quarter[pn_phase_index(seed_value, m, n) as usize])
                .collect())
        })
        .collect();
    Ok(Codebook {
        kind: CodebookKind::Sounding,
        n_elements: geometry.n_elements,
        angles_deg: None,
        codewords,
        seed: Some(seed_value),
    })
}

/// Directional codewords first, then sounding codewords.
pub fn concat_codebook(directional: &Codebook, sounding: &Codebook) -> Result<Codebook> {
    if directional.n_elements != sounding.n_elements {
        return Err(Error::LengthMismatch {
            expected: directional.n_elements,
            found: sounding.n_elements,
        });
    }
    let mut codewords = directional.codewords.clone();
    codewords.extend(sounding.codewords.iter().cloned());
    Ok(Codebook {
        kind: CodebookKind::Concatenated,
        n_elements: directional.n_elements,
        angles_deg: None,
        codewords,
        seed: sounding.seed,
    })
}
