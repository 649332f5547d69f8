//! Evaluation quantities.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{apply_impairment, array_response, inner, ArrayGeometry, ImpairmentVector};
use crate::codebook::{Awv, Codebook};
use crate::dataset::Dataset;
use crate::{Error, Result};

/// Normalized post-alignment gain `|h^H diag(e) w|^2 / ||h||^2`.
///
/// Bounded by 1 for unit-norm `w` and unit-magnitude `e`; a gain-impaired
/// array can exceed it slightly.
pub fn bf_gain(h: &[Complex64], e: &ImpairmentVector, w: &Awv) -> Result<f64> {
    if h.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            found: w.len(),
        });
    }
    let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let wt = apply_impairment(e, w)?;
    // |h^H w~|^2 == |w~^H h|^2
    Ok(inner(&wt, h).norm_sqr() / energy)
}

pub fn loss_db(gain_ref: f64, gain_pred: f64) -> f64 {
    10.0 * (gain_ref / gain_pred).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub predicted: usize,
    pub reference: usize,
    pub gain_pred: f64,
    pub gain_ref: f64,
    pub loss_db: f64,
}

/// True post-alignment gains of every directional beam for one device.
///
/// The reference beam is the exhaustive optimum over the full directional
/// codebook under the same impairment, so losses are never negative.
pub struct GainOracle {
    geometry: ArrayGeometry,
    impaired: Vec<Awv>,
    label_map: Vec<usize>,
}

impl GainOracle {
    pub fn new(
        geometry: ArrayGeometry,
        directional: &Codebook,
        e: &ImpairmentVector,
        label_map: &[usize],
    ) -> Result<Self> {
        if let Some(&k) = label_map.iter().find(|&&k| k >= directional.len()) {
            return Err(Error::Domain(format!("label maps to beam {k} outside the codebook")));
        }
        let impaired = directional
            .codewords
            .iter()
            .map(|w| apply_impairment(e, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geometry,
            impaired,
            label_map: label_map.to_vec(),
        })
    }

    pub fn for_dataset(dataset: &Dataset) -> Result<Self> {
        let dft = dataset.meta.config.dft()?;
        Self::new(
            dataset.geometry()?,
            &dft,
            &dataset.meta.impairment,
            &dataset.meta.label_map,
        )
    }

    /// Gains of every directional beam toward `aoa_deg` (unit path gain).
    pub fn beam_gains(&self, aoa_deg: f64) -> Result<Vec<f64>> {
        let a = array_response(&self.geometry, aoa_deg)?;
        let energy = self.geometry.n_elements as f64;
        Ok(self.impaired.iter().map(|w| inner(w, &a).norm_sqr() / energy).collect())
    }

    /// Score a class prediction; `None` means no beam could be chosen (zero gain).
    pub fn evaluate(&self, aoa_deg: f64, predicted_class: Option<usize>) -> Result<AlignmentResult> {
        let gains = self.beam_gains(aoa_deg)?;
        let reference = crate::dataset::assign_label(&gains)?;
        let gain_ref = gains[reference];
        let (predicted, gain_pred) = match predicted_class {
            Some(c) => {
                let beam = *self
                    .label_map
                    .get(c)
                    .ok_or_else(|| Error::Domain(format!("class {c} outside label map")))?;
                (beam, gains[beam])
            }
            None => (usize::MAX, 0.0),
        };
        Ok(AlignmentResult {
            predicted,
            reference,
            gain_pred,
            gain_ref,
            loss_db: loss_db(gain_ref, gain_pred),
        })
    }
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], references: &[usize]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::LengthMismatch {
            expected: references.len(),
            found: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy inputs".into()));
    }
    let hits = predictions.iter().zip(references).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Rank-based percentile: the sorted value at index `ceil(q/100 * (n-1))`.
pub fn gain_loss_percentile(losses_db: &[f64], q: f64) -> Result<f64> {
    if losses_db.is_empty() {
        return Err(Error::Empty("loss list".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted = losses_db.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q / 100.0 * (sorted.len() - 1) as f64).ceil() as usize;
    Ok(sorted[idx.min(sorted.len() - 1)])
}

/// Fraction of losses strictly below `threshold_db`.
pub fn coverage_below(losses_db: &[f64], threshold_db: f64) -> f64 {
    if losses_db.is_empty() {
        return 0.0;
    }
    losses_db.iter().filter(|&&l| l < threshold_db).count() as f64 / losses_db.len() as f64
}

pub const REQUIRED_M_THRESHOLD_DB: f64 = 2.0;
pub const REQUIRED_M_COVERAGE: f64 = 0.9;

/// Smallest `M` whose losses are below `threshold_db` in at least
/// `coverage` of the alignments.
pub fn required_m(results_by_m: &BTreeMap<usize, Vec<f64>>, threshold_db: f64, coverage: f64) -> Option<usize> {
    results_by_m
        .iter()
        .find(|(_, losses)| !losses.is_empty() && coverage_below(losses, threshold_db) >= coverage)
        .map(|(&m, _)| m)
}

/// Probe savings of `M` compressive measurements over a `K`-beam sweep.
pub fn overhead_reduction(k: usize, m: usize) -> Result<f64> {
    if k == 0 || m > k {
        return Err(Error::Domain(format!(
            "overhead reduction needs 0 <= M <= K, K > 0 (K={k}, M={m})"
        )));
    }
    Ok((k - m) as f64 / k as f64)
}
