//! Synthetic learning-stage captures.
//!
//! Each point is one alignment capture through the concatenated codebook:
//! the DFT sweep RSS provides the label (argmax beam), the PN RSS provides
//! the features. One impairment vector and one PN codebook are fixed per
//! dataset (one device); AoA, path phase and RSS noise vary per point.
//!
//! On disk a dataset is JSON lines: a header record carrying the generating
//! configuration, impairment and label map, then one record per point.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{array_response, draw_impairment, ArrayGeometry, ImpairmentConfig, ImpairmentVector};
use crate::codebook::{concat_codebook, dft_codebook, pn_codebook, Codebook};
use crate::sounding::{sigma_from_rss_snr, sound_codebook};
use crate::{seed, Error, Result};

const FORMAT_TAG: &str = "beamalign-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_points: usize,
    /// AoA drawn uniformly from this interval.
    pub aoa_range_deg: [f64; 2],
    /// Draw AoAs from the DFT grid angles inside `aoa_range_deg` instead.
    pub aoa_on_grid: bool,
    pub k: usize,
    pub dft_range_deg: [f64; 2],
    pub m0: usize,
    pub n_rx: usize,
    pub spacing_over_wavelength: f64,
    pub impairment: ImpairmentConfig,
    /// `None` means noiseless sounding.
    pub rss_snr_db: Option<f64>,
    pub pn_seed: u64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_points: 5000,
            aoa_range_deg: [-28.0, 44.0],
            aoa_on_grid: false,
            k: 64,
            dft_range_deg: [-45.0, 45.0],
            m0: 36,
            n_rx: 36,
            spacing_over_wavelength: 0.5,
            impairment: ImpairmentConfig::default(),
            rss_snr_db: Some(20.0),
            pn_seed: 36,
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.n_rx, self.spacing_over_wavelength)
    }

    pub fn dft(&self) -> Result<Codebook> {
        dft_codebook(&self.geometry()?, self.k, self.dft_range_deg[0], self.dft_range_deg[1])
    }

    pub fn pn(&self) -> Result<Codebook> {
        pn_codebook(&self.geometry()?, self.m0, self.pn_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::InvalidConfig("n_points must be >= 1".into()));
        }
        let [lo, hi] = self.aoa_range_deg;
        if !(lo <= hi && lo > -90.0 && hi < 90.0) {
            return Err(Error::InvalidConfig(format!(
                "AoA range [{lo}, {hi}] must lie inside (-90, 90)"
            )));
        }
        if self.m0 == 0 {
            return Err(Error::InvalidConfig("m0 must be >= 1".into()));
        }
        if let Some(snr) = self.rss_snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidConfig(
                    "rss_snr_db must be finite (omit it for noiseless)".into(),
                ));
            }
        }
        self.geometry()?;
        self.dft()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub aoa_true_deg: f64,
    pub dft_rss: Vec<f64>,
    pub pn_rss: Vec<f64>,
    /// Dense class index; `label_map[label]` is the DFT beam index.
    pub label: usize,
    pub snr_tag_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: GenConfig,
    pub dft_angles_deg: Vec<f64>,
    pub impairment: ImpairmentVector,
    pub sigma_rss: f64,
    pub clamped: usize,
    /// Class index -> original DFT beam index; strictly increasing.
    pub label_map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.meta.label_map.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.label).collect()
    }

    /// Steering angle of each retained class.
    pub fn class_angles_deg(&self) -> Vec<f64> {
        self.meta
            .label_map
            .iter()
            .map(|&k| self.meta.dft_angles_deg[k])
            .collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for p in &self.points {
            counts[p.label] += 1;
        }
        counts
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        self.meta.config.geometry()
    }

    /// Same metadata, different points.
    pub fn with_points(&self, points: Vec<DataPoint>) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            points,
        }
    }

    /// Check lengths, label map and `label_map[label] == argmax(dft_rss)` for every point.
    pub fn validate(&self) -> Result<()> {
        self.validate_header()?;
        for (i, p) in self.points.iter().enumerate() {
            self.validate_point(p)
                .map_err(|e| Error::Domain(format!("point {i}: {e}")))?;
        }
        Ok(())
    }

    fn validate_header(&self) -> Result<()> {
        let k = self.meta.config.k;
        if self.meta.dft_angles_deg.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: self.meta.dft_angles_deg.len(),
            });
        }
        if self.meta.label_map.is_empty() {
            return Err(Error::Empty("label map".into()));
        }
        if self.meta.label_map.windows(2).any(|w| w[1] <= w[0]) || self.meta.label_map.iter().any(|&l| l >= k) {
            return Err(Error::InvalidConfig(
                "label map must be strictly increasing beam indices".into(),
            ));
        }
        if self.meta.impairment.len() != self.meta.config.n_rx {
            return Err(Error::LengthMismatch {
                expected: self.meta.config.n_rx,
                found: self.meta.impairment.len(),
            });
        }
        Ok(())
    }

    fn validate_point(&self, p: &DataPoint) -> Result<()> {
        let cfg = &self.meta.config;
        if p.dft_rss.len() != cfg.k {
            return Err(Error::LengthMismatch {
                expected: cfg.k,
                found: p.dft_rss.len(),
            });
        }
        if p.pn_rss.len() != cfg.m0 {
            return Err(Error::LengthMismatch {
                expected: cfg.m0,
                found: p.pn_rss.len(),
            });
        }
        if p.dft_rss.iter().chain(&p.pn_rss).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain("RSS values must be finite and nonnegative".into()));
        }
        let beam = *self
            .meta
            .label_map
            .get(p.label)
            .ok_or_else(|| Error::Domain(format!("label {} outside {} classes", p.label, self.n_classes())))?;
        let best = assign_label(&p.dft_rss)?;
        if beam != best {
            return Err(Error::Domain(format!(
                "label maps to beam {beam} but the DFT sweep peaks at {best}"
            )));
        }
        Ok(())
    }
}

/// Argmax of a sweep, ties to the lowest index.
pub fn assign_label(dft_rss: &[f64]) -> Result<usize> {
    if dft_rss.is_empty() {
        return Err(Error::Empty("DFT sweep".into()));
    }
    let mut best = 0;
    for (i, &v) in dft_rss.iter().enumerate().skip(1) {
        if v > dft_rss[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Homoscedastic RSS noise level for a device.
///
/// The per-channel calibration is averaged in the power domain over unit-gain
/// channels at every DFT grid angle, using the sounding codebook.
fn dataset_sigma(config: &GenConfig, pn: &Codebook, e: &ImpairmentVector, dft_angles: &[f64]) -> Result<f64> {
    let Some(snr) = config.rss_snr_db else {
        return Ok(0.0);
    };
    let geometry = config.geometry()?;
    let mut acc = 0.0;
    for &theta in dft_angles {
        let h = array_response(&geometry, theta)?;
        acc += sigma_from_rss_snr(&h, pn, e, snr)?.powi(2);
    }
    Ok((acc / dft_angles.len() as f64).sqrt())
}

pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let geometry = config.geometry()?;
    let dft = config.dft()?;
    let pn = config.pn()?;
    let concat = concat_codebook(&dft, &pn)?;
    let e = draw_impairment(&config.impairment, &geometry)?;
    let dft_angles = dft.angles_deg.clone().expect("directional codebook carries angles");
    let sigma = dataset_sigma(config, &pn, &e, &dft_angles)?;

    let [lo, hi] = config.aoa_range_deg;
    let grid: Vec<f64> = dft_angles.iter().copied().filter(|a| *a >= lo && *a <= hi).collect();
    if config.aoa_on_grid && grid.is_empty() {
        return Err(Error::InvalidConfig("no DFT grid angle inside the AoA range".into()));
    }

    let k = config.k;
    let points = (0..config.n_points)
        .into_par_iter()
        .map(|i| -> Result<(DataPoint, usize)> {
            let mut rng = seed::rng_at(config.seed, &[i as u64]);
            let aoa = if config.aoa_on_grid {
                grid[rng.gen_range(0..grid.len())]
            } else if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            };
            let alpha = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let h: Vec<Complex64> = array_response(&geometry, aoa)?.into_iter().map(|a| alpha * a).collect();
            let rss = sound_codebook(&concat, &e, &h, sigma, &mut rng)?;
            let mut values = rss.values;
            let pn_rss = values.split_off(k);
            let label = assign_label(&values)?;
            Ok((
                DataPoint {
                    aoa_true_deg: aoa,
                    dft_rss: values,
                    pn_rss,
                    label,
                    snr_tag_db: config.rss_snr_db,
                },
                rss.clamped,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let clamped = points.iter().map(|(_, c)| c).sum();
    Ok(Dataset {
        meta: DatasetMeta {
            config: config.clone(),
            dft_angles_deg: dft_angles,
            impairment: e,
            sigma_rss: sigma,
            clamped,
            label_map: (0..k).collect(),
        },
        points: points.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Drop points whose label has fewer than `min_count` occurrences and
/// re-index the survivors densely, keeping beam order.
pub fn filter_labels(dataset: &Dataset, min_count: usize) -> Result<Dataset> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be >= 1".into()));
    }
    let counts = dataset.label_counts();
    let mut remap = vec![None; counts.len()];
    let mut label_map = Vec::new();
    for (old, &c) in counts.iter().enumerate() {
        if c >= min_count {
            remap[old] = Some(label_map.len());
            label_map.push(dataset.meta.label_map[old]);
        }
    }
    if label_map.is_empty() {
        return Err(Error::Empty(format!("no label has at least {min_count} points")));
    }
    let points = dataset
        .points
        .iter()
        .filter_map(|p| remap[p.label].map(|label| DataPoint { label, ..p.clone() }))
        .collect();
    let mut meta = dataset.meta.clone();
    meta.label_map = label_map;
    Ok(Dataset { meta, points })
}

/// Label-stratified random split. Points keep their original order within
/// each side.
pub fn split(dataset: &Dataset, train_fraction: f64, seed_value: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, p) in dataset.points.iter().enumerate() {
        by_label[p.label].push(i);
    }
    let mut in_train = vec![false; dataset.len()];
    for (label, idx) in by_label.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "label {label} has {} point(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        let mut rng = seed::rng_at(seed_value, &[label as u64]);
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset.points.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        dataset.with_points(train.into_iter().map(|(p, _)| p).collect()),
        dataset.with_points(test.into_iter().map(|(p, _)| p).collect()),
    ))
}

/// The first `m` PN measurements.
pub fn truncate_features(pn_rss: &[f64], m: usize) -> Result<&[f64]> {
    if m == 0 || m > pn_rss.len() {
        return Err(Error::Domain(format!(
            "feature prefix {m} outside 1..={}",
            pn_rss.len()
        )));
    }
    Ok(&pn_rss[..m])
}

/// Truncated features for every point.
pub fn dataset_features(dataset: &Dataset, m: usize) -> Result<Vec<Vec<f64>>> {
    dataset
        .points
        .iter()
        .map(|p| truncate_features(&p.pn_rss, m).map(<[f64]>::to_vec))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: DatasetMeta,
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        meta: dataset.meta.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for p in &dataset.points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| Error::parse(1, e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::parse(1, format!("unknown format tag {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::parse(1, format!("unsupported version {}", header.version)));
    }
    let mut dataset = Dataset {
        meta: header.meta,
        points: Vec::new(),
    };
    dataset.validate_header().map_err(|e| Error::parse(1, e.to_string()))?;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: DataPoint = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        dataset
            .validate_point(&p)
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        dataset.points.push(p);
    }
    Ok(dataset)
}
