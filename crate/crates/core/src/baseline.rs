//! Model-based alignment baselines.
//!
//! RSS matching pursuit scores each AoA hypothesis `k` by the normalized
//! correlation `<p, |Psi_k|> / ||Psi_k||` between the measured RSS and a
//! magnitude dictionary column. The vanilla variant uses the ideal array
//! model; the refined variant estimates the magnitudes from labeled
//! training captures, which absorbs the unknown impairment.

use serde::{Deserialize, Serialize};

use crate::array::{array_response, inner, ArrayGeometry};
use crate::codebook::Codebook;
use crate::dataset::{assign_label, Dataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionarySource {
    Model,
    Estimated,
}

/// Nonnegative `M x K'` matrix; entry `(m, k)` approximates `|w~_m^H a(theta_k)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeDictionary {
    pub source: DictionarySource,
    pub n_measurements: usize,
    pub n_classes: usize,
    /// Row-major, one row per sounding beam.
    pub values: Vec<Vec<f64>>,
}

impl MagnitudeDictionary {
    pub fn new(source: DictionarySource, values: Vec<Vec<f64>>) -> Result<Self> {
        let n_measurements = values.len();
        if n_measurements == 0 {
            return Err(Error::Empty("dictionary rows".into()));
        }
        let n_classes = values[0].len();
        if let Some(row) = values.iter().find(|r| r.len() != n_classes) {
            return Err(Error::LengthMismatch {
                expected: n_classes,
                found: row.len(),
            });
        }
        if values.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(
                "dictionary entries must be finite and nonnegative".into(),
            ));
        }
        let dict = Self {
            source,
            n_measurements,
            n_classes,
            values,
        };
        if let Some(k) = dict.column_norms().iter().position(|&n| n == 0.0) {
            return Err(Error::Domain(format!("dictionary column {k} is all zero")));
        }
        Ok(dict)
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| self.values.iter().map(|r| r[k] * r[k]).sum::<f64>().sqrt())
            .collect()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[k]).collect()
    }
}

/// Exhaustive sweep selection: argmax of the DFT RSS.
pub fn exhaustive_select(dft_rss: &[f64]) -> Result<usize> {
    assign_label(dft_rss)
}

/// Impairment-free dictionary from the ideal sounding codewords.
pub fn model_dictionary(
    sounding: &Codebook,
    angles_deg: &[f64],
    geometry: &ArrayGeometry,
) -> Result<MagnitudeDictionary> {
    if sounding.is_empty() {
        return Err(Error::Empty("sounding codebook".into()));
    }
    if sounding.n_elements != geometry.n_elements {
        return Err(Error::LengthMismatch {
            expected: geometry.n_elements,
            found: sounding.n_elements,
        });
    }
    let responses = angles_deg
        .iter()
        .map(|&a| array_response(geometry, a))
        .collect::<Result<Vec<_>>>()?;
    let values = sounding
        .codewords
        .iter()
        .map(|w| responses.iter().map(|a| inner(w, a).norm()).collect())
        .collect();
    MagnitudeDictionary::new(DictionarySource::Model, values)
}

/// Dictionary refined from labeled training captures.
///
/// Each capture is normalized by its path-gain estimate
/// `max_k dft_rss / sqrt(N)`, then PN RSS is averaged per label.
pub fn estimate_dictionary(train: &Dataset, m: usize) -> Result<MagnitudeDictionary> {
    let m0 = train.meta.config.m0;
    if m == 0 || m > m0 {
        return Err(Error::Domain(format!("measurement count {m} outside 1..={m0}")));
    }
    let sqrt_n = (train.meta.config.n_rx as f64).sqrt();
    let k = train.n_classes();
    let mut sums = vec![vec![0.0; k]; m];
    let mut counts = vec![0usize; k];
    for p in &train.points {
        let peak = p.dft_rss.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            continue;
        }
        let gain = peak / sqrt_n;
        counts[p.label] += 1;
        for (row, &v) in sums.iter_mut().zip(&p.pn_rss[..m]) {
            row[p.label] += v / gain;
        }
    }
    if let Some(label) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Empty(format!("label {label} has no training captures")));
    }
    for row in &mut sums {
        for (v, &c) in row.iter_mut().zip(&counts) {
            *v /= c as f64;
        }
    }
    MagnitudeDictionary::new(DictionarySource::Estimated, sums)
}

/// Normalized correlation scores for every column.
pub fn rss_mp_scores(p: &[f64], dict: &MagnitudeDictionary) -> Result<Vec<f64>> {
    if p.len() != dict.n_measurements {
        return Err(Error::LengthMismatch {
            expected: dict.n_measurements,
            found: p.len(),
        });
    }
    let norms = dict.column_norms();
    let mut scores = vec![0.0; dict.n_classes];
    for (row, &pm) in dict.values.iter().zip(p) {
        for (s, &d) in scores.iter_mut().zip(row) {
            *s += pm * d;
        }
    }
    for (k, (s, n)) in scores.iter_mut().zip(&norms).enumerate() {
        if *n == 0.0 {
            return Err(Error::Domain(format!("dictionary column {k} is all zero")));
        }
        *s /= n;
    }
    Ok(scores)
}

/// RSS-MP class estimate, ties to the lowest index.
pub fn rss_mp(p: &[f64], dict: &MagnitudeDictionary) -> Result<usize> {
    assign_label(&rss_mp_scores(p, dict)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{ImpairmentConfig, ImpairmentVector};
    use crate::codebook::{dft_codebook, pn_codebook};
    use crate::dataset::{filter_labels, generate_dataset, GenConfig};
    use crate::seed;
    use num_complex::Complex64;
    use rand::Rng;

    #[test]
    fn exhaustive_select_is_argmax() {
        assert_eq!(exhaustive_select(&[0.2, 3.0, 1.0]).unwrap(), 1);
        let mut rng = seed::rng(2);
        for _ in 0..100 {
            let v: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
            let i = exhaustive_select(&v).unwrap();
            assert_eq!(i, assign_label(&v).unwrap());
            assert!(v.iter().all(|x| *x <= v[i]));
        }
    }

    #[test]
    fn model_dictionary_single_beam_by_hand() {
        let g = ArrayGeometry::ula(4).unwrap();
        let w = crate::codebook::Awv(vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 0.5),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, -0.5),
        ]);
        let cb = Codebook {
            kind: crate::codebook::CodebookKind::Sounding,
            n_elements: 4,
            angles_deg: None,
            codewords: vec![w],
            seed: None,
        };
        // At 30 deg the response is [1, j, -1, -j], matching the beam exactly.
        let d = model_dictionary(&cb, &[30.0, 10.0], &g).unwrap();
        assert!((d.values[0][0] - 2.0).abs() < 1e-12);
        // At 10 deg, sum_n 0.5 exp(j(pi n sin10 - n pi/2)) by hand in real arithmetic.
        let step = std::f64::consts::PI * 10f64.to_radians().sin() - std::f64::consts::FRAC_PI_2;
        let (re, im) = (0..4).fold((0.0, 0.0), |(re, im), n| {
            let t = step * n as f64;
            (re + 0.5 * t.cos(), im + 0.5 * t.sin())
        });
        assert!((d.values[0][1] - (re * re + im * im).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn model_dictionary_with_dft_sounding_peaks_on_diagonal() {
        let g = ArrayGeometry::ula(16).unwrap();
        let dft = dft_codebook(&g, 12, -40.0, 40.0).unwrap();
        let d = model_dictionary(&dft, dft.angles_deg.as_ref().unwrap(), &g).unwrap();
        for m in 0..12 {
            assert_eq!(assign_label(&d.values[m]).unwrap(), m);
            assert!(d.values[m].iter().all(|v| *v <= 4.0 + 1e-12));
        }
    }

    #[test]
    fn entries_bounded_by_sqrt_n() {
        let g = ArrayGeometry::ula(36).unwrap();
        let pn = pn_codebook(&g, 36, 1).unwrap();
        let dft = dft_codebook(&g, 64, -45.0, 45.0).unwrap();
        let d = model_dictionary(&pn, dft.angles_deg.as_ref().unwrap(), &g).unwrap();
        assert!(d.values.iter().flatten().all(|v| *v <= 6.0 + 1e-12));
    }

    #[test]
    fn orthogonal_columns() {
        let d = MagnitudeDictionary::new(DictionarySource::Model, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(rss_mp(&[0.9, 0.1], &d).unwrap(), 0);
        assert!(MagnitudeDictionary::new(DictionarySource::Model, vec![vec![1.0, 0.0], vec![2.0, 0.0]]).is_err());
        assert!(rss_mp(&[1.0], &d).is_err());
    }

    #[test]
    fn noiseless_column_selects_itself() {
        let g = ArrayGeometry::ula(16).unwrap();
        let pn = pn_codebook(&g, 10, 3).unwrap();
        let dft = dft_codebook(&g, 16, -45.0, 45.0).unwrap();
        let d = model_dictionary(&pn, dft.angles_deg.as_ref().unwrap(), &g).unwrap();
        for k in 0..16 {
            let p = d.column(k);
            // brute force: Cauchy-Schwarz says the matching column maximizes the score
            let scores: Vec<f64> = (0..16)
                .map(|j| {
                    let c = d.column(j);
                    let dot: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
                    dot / c.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect();
            let best = assign_label(&scores).unwrap();
            assert_eq!(rss_mp(&p, &d).unwrap(), best);
            assert!((scores[best] - scores[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_invariance_of_selection() {
        let g = ArrayGeometry::ula(16).unwrap();
        let pn = pn_codebook(&g, 6, 3).unwrap();
        let dft = dft_codebook(&g, 16, -45.0, 45.0).unwrap();
        let d = model_dictionary(&pn, dft.angles_deg.as_ref().unwrap(), &g).unwrap();
        let mut rng = seed::rng(8);
        for _ in 0..200 {
            let p: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0)).collect();
            let base = rss_mp(&p, &d).unwrap();
            let c = rng.gen_range(0.01..100.0);
            let scaled: Vec<f64> = p.iter().map(|v| v * c).collect();
            assert_eq!(rss_mp(&scaled, &d).unwrap(), base);
            let mut d2 = d.clone();
            let col = rng.gen_range(0..16);
            for row in &mut d2.values {
                row[col] *= c;
            }
            assert_eq!(rss_mp(&p, &d2).unwrap(), base);
        }
    }

    fn clean_config(impairment: ImpairmentConfig) -> GenConfig {
        GenConfig {
            n_points: 800,
            k: 16,
            m0: 10,
            n_rx: 16,
            aoa_range_deg: [-45.0, 45.0],
            aoa_on_grid: true,
            impairment,
            rss_snr_db: None,
            ..GenConfig::default()
        }
    }

    #[test]
    fn estimate_matches_model_without_mismatch() {
        let ds = filter_labels(&generate_dataset(&clean_config(ImpairmentConfig::none())).unwrap(), 1).unwrap();
        assert_eq!(ds.n_classes(), 16);
        let est = estimate_dictionary(&ds, 10).unwrap();
        let model = model_dictionary(
            &ds.meta.config.pn().unwrap(),
            &ds.class_angles_deg(),
            &ds.geometry().unwrap(),
        )
        .unwrap();
        for (a, b) in est.values.iter().flatten().zip(model.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert_eq!(est.source, DictionarySource::Estimated);
    }

    #[test]
    fn estimate_sees_impairment() {
        let ds = filter_labels(
            &generate_dataset(&clean_config(ImpairmentConfig::default())).unwrap(),
            1,
        )
        .unwrap();
        let est = estimate_dictionary(&ds, 10).unwrap();
        let model = model_dictionary(
            &ds.meta.config.pn().unwrap(),
            &ds.class_angles_deg(),
            &ds.geometry().unwrap(),
        )
        .unwrap();
        let mad = est
            .values
            .iter()
            .flatten()
            .zip(model.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / (10 * ds.n_classes()) as f64;
        assert!(mad > 1e-3, "mean abs deviation {mad}");
    }

    #[test]
    fn estimate_is_scale_free() {
        let ds = filter_labels(
            &generate_dataset(&clean_config(ImpairmentConfig::default())).unwrap(),
            1,
        )
        .unwrap();
        let mut scaled = ds.clone();
        for p in &mut scaled.points {
            p.dft_rss.iter_mut().for_each(|v| *v *= 3.5);
            p.pn_rss.iter_mut().for_each(|v| *v *= 3.5);
        }
        let a = estimate_dictionary(&ds, 7).unwrap();
        let b = estimate_dictionary(&scaled, 7).unwrap();
        for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
            assert!((x - y).abs() < 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn estimate_requires_every_label() {
        let ds = filter_labels(&generate_dataset(&clean_config(ImpairmentConfig::none())).unwrap(), 1).unwrap();
        let mut missing = ds.clone();
        missing.points.retain(|p| p.label != 3);
        assert!(matches!(estimate_dictionary(&missing, 5), Err(Error::Empty(_))));
        assert!(estimate_dictionary(&ds, 11).is_err());
    }

    #[test]
    fn identity_impairment_vector_is_unit() {
        assert!(ImpairmentVector::identity(3).values.iter().all(|v| v.re == 1.0));
    }
}
