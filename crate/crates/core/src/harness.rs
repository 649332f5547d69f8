//! Experiment drivers.
//!
//! Each sweep is a pure function of an [`ExperimentConfig`]: every cell
//! derives its own seed from the master seed and its coordinates, cells run
//! on the rayon pool, and rows come back in cell order. Output is plain CSV.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{beam_pattern, draw_impairment, ImpairmentConfig};
use crate::baseline::{estimate_dictionary, model_dictionary, rss_mp, MagnitudeDictionary};
use crate::dataset::{filter_labels, generate_dataset, split, truncate_features, Dataset, GenConfig};
use crate::metrics::{coverage_below, gain_loss_percentile, GainOracle, REQUIRED_M_COVERAGE, REQUIRED_M_THRESHOLD_DB};
use crate::neural::{predict_batch, train, TrainConfig};
use crate::{seed, Error, Result};

const TAG_ACCURACY: u64 = 0xACC;
const TAG_GAINLOSS: u64 = 0x6A1;
const TAG_ARRAY: u64 = 0xA77;
const TAG_SPLIT: u64 = 0x5B1;
const TAG_TRAIN: u64 = 0x7A1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamPatternConfig {
    /// Directional codeword to plot; `None` picks the one nearest broadside.
    pub dft_index: Option<usize>,
    pub pn_index: usize,
    pub grid_step_deg: f64,
    /// Floor for dB conversion, relative to the array gain `N`.
    pub floor_db: f64,
}

impl Default for BeamPatternConfig {
    fn default() -> Self {
        Self {
            dft_index: None,
            pn_index: 0,
            grid_step_deg: 0.1,
            floor_db: -40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub gen: GenConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Labels with fewer captures are dropped before splitting.
    pub min_label_count: usize,
    pub m_list: Vec<usize>,
    pub train_sizes: Vec<usize>,
    pub array_sizes: Vec<usize>,
    /// Measurement counts scanned by the array sweep.
    pub array_m_list: Vec<usize>,
    pub train: TrainConfig,
    pub trials: usize,
    pub beam_pattern: BeamPatternConfig,
    pub output_dir: Option<String>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            gen: GenConfig::default(),
            n_train: 2000,
            n_test: 1000,
            min_label_count: 20,
            m_list: vec![4, 5, 6, 8, 10, 15, 20, 25, 30, 36],
            train_sizes: vec![500, 1000, 2000],
            array_sizes: vec![8, 16, 32, 64],
            array_m_list: vec![2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48],
            train: TrainConfig::default(),
            trials: 3,
            beam_pattern: BeamPatternConfig::default(),
            output_dir: None,
            master_seed: 2021,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("m_list", &self.m_list),
            ("train_sizes", &self.train_sizes),
            ("array_sizes", &self.array_sizes),
            ("array_m_list", &self.array_m_list),
        ];
        for (name, list) in lists {
            if list.is_empty() || list.contains(&0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-empty and positive")));
            }
        }
        if self.trials == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig(
                "trials, n_train and n_test must be positive".into(),
            ));
        }
        if let Some(&m) = self.m_list.iter().find(|&&m| m > self.gen.m0) {
            return Err(Error::InvalidConfig(format!("M = {m} exceeds m0 = {}", self.gen.m0)));
        }
        if let Some(&s) = self.train_sizes.iter().find(|&&s| s > self.n_train) {
            return Err(Error::InvalidConfig(format!(
                "train size {s} exceeds n_train = {}",
                self.n_train
            )));
        }
        self.gen.validate()?;
        self.train.validate()
    }

    pub fn train_fraction(&self) -> f64 {
        self.n_train as f64 / (self.n_train + self.n_test) as f64
    }

    /// Seed of one sweep cell.
    pub fn cell_seed(&self, coords: &[u64]) -> u64 {
        seed::derive(self.master_seed, coords)
    }

    /// Generate, filter and split one trial's data.
    pub fn trial_data(&self, gen: &GenConfig, data_seed: u64) -> Result<(Dataset, Dataset)> {
        let gen = GenConfig {
            n_points: self.n_train + self.n_test,
            seed: data_seed,
            ..gen.clone()
        };
        let ds = filter_labels(&generate_dataset(&gen)?, self.min_label_count)?;
        split(&ds, self.train_fraction(), seed::derive(data_seed, &[TAG_SPLIT]))
    }
}

fn raw_features(ds: &Dataset, m: usize) -> Result<Vec<Vec<f64>>> {
    ds.points
        .iter()
        .map(|p| truncate_features(&p.pn_rss, m).map(<[f64]>::to_vec))
        .collect()
}

fn mp_predictions(features: &[Vec<f64>], dict: &MagnitudeDictionary) -> Result<Vec<Option<usize>>> {
    features.iter().map(|p| rss_mp(p, dict).map(Some)).collect()
}

fn losses(oracle: &GainOracle, test: &Dataset, predicted: &[Option<usize>]) -> Result<Vec<f64>> {
    test.points
        .iter()
        .zip(predicted)
        .map(|(p, &c)| oracle.evaluate(p.aoa_true_deg, c).map(|r| r.loss_db))
        .collect()
}

fn nn_predictions(
    train_set: &Dataset,
    test_features: &[Vec<f64>],
    m: usize,
    config: &TrainConfig,
) -> Result<Vec<Option<usize>>> {
    let (params, _) = train(train_set, m, config)?;
    predict_batch(&params, test_features)
}

/// Alignment algorithms compared by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// RSS-MP with the ideal-codeword dictionary.
    RssMpVanilla,
    /// RSS-MP with the dictionary estimated from training captures.
    RssMpRefined,
    Nn,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::RssMpVanilla, Algo::RssMpRefined, Algo::Nn];

    pub fn name(self) -> &'static str {
        match self {
            Algo::RssMpVanilla => "rss_mp_vanilla",
            Algo::RssMpRefined => "rss_mp_refined",
            Algo::Nn => "nn",
        }
    }
}

fn predict_all(
    algo: Algo,
    train_set: &Dataset,
    test_features: &[Vec<f64>],
    m: usize,
    train_config: &TrainConfig,
) -> Result<Vec<Option<usize>>> {
    match algo {
        Algo::RssMpVanilla => {
            let pn = train_set.meta.config.pn()?.prefix(m)?;
            let dict = model_dictionary(&pn, &train_set.class_angles_deg(), &train_set.geometry()?)?;
            mp_predictions(test_features, &dict)
        }
        Algo::RssMpRefined => mp_predictions(test_features, &estimate_dictionary(train_set, m)?),
        Algo::Nn => nn_predictions(train_set, test_features, m, train_config),
    }
}

// ---------------------------------------------------------------- accuracy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub scenario: String,
    pub algo: Algo,
    pub m: usize,
    pub train_size: usize,
    pub trial: usize,
    pub accuracy: f64,
}

pub const ACCURACY_HEADER: &str = "scenario,algo,M,train_size,trial,accuracy";

impl AccuracyRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.scenario,
            self.algo.name(),
            self.m,
            self.train_size,
            self.trial,
            self.accuracy
        )
    }
}

/// Stratification-free prefix of a seeded permutation of the training pool.
fn subsample(train_set: &Dataset, size: usize, seed_value: u64) -> Dataset {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    idx.shuffle(&mut seed::rng(seed_value));
    idx.truncate(size.min(train_set.len()));
    idx.sort_unstable();
    train_set.with_points(idx.into_iter().map(|i| train_set.points[i].clone()).collect())
}

/// NN test accuracy per `(M, train size, trial)`.
pub fn run_accuracy_vs_m(config: &ExperimentConfig) -> Result<Vec<AccuracyRow>> {
    config.validate()?;
    let trials: Vec<(Dataset, Dataset)> = (0..config.trials)
        .into_par_iter()
        .map(|t| config.trial_data(&config.gen, config.cell_seed(&[TAG_ACCURACY, t as u64])))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for t in 0..config.trials {
        for &size in &config.train_sizes {
            for &m in &config.m_list {
                cells.push((t, size, m));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(t, size, m)| {
            let (pool, test) = &trials[t];
            let subset = subsample(pool, size, config.cell_seed(&[TAG_ACCURACY, t as u64, size as u64]));
            let train_config = TrainConfig {
                seed: config.cell_seed(&[TAG_TRAIN, TAG_ACCURACY, t as u64, size as u64, m as u64]),
                ..config.train.clone()
            };
            // Labels missing from a small subset still index the shared label space.
            let pred = nn_predictions(&subset, &raw_features(test, m)?, m, &train_config)?;
            let hits = pred
                .iter()
                .zip(&test.points)
                .filter(|(c, p)| **c == Some(p.label))
                .count();
            Ok(AccuracyRow {
                scenario: config.scenario.clone(),
                algo: Algo::Nn,
                m,
                train_size: size,
                trial: t,
                accuracy: hits as f64 / test.len() as f64,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- gain loss

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainLossRow {
    pub scenario: String,
    pub algo: Algo,
    pub m: usize,
    pub trial: usize,
    pub p50_db: f64,
    pub p90_db: f64,
    pub p99_db: f64,
    /// Fraction of captures with loss strictly below the required-M threshold.
    pub coverage: f64,
}

pub const GAINLOSS_HEADER: &str = "scenario,algo,M,trial,p50_db,p90_db,p99_db";

impl GainLossRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scenario,
            self.algo.name(),
            self.m,
            self.trial,
            self.p50_db,
            self.p90_db,
            self.p99_db
        )
    }
}

fn loss_row(config: &ExperimentConfig, algo: Algo, m: usize, trial: usize, losses_db: &[f64]) -> Result<GainLossRow> {
    Ok(GainLossRow {
        scenario: config.scenario.clone(),
        algo,
        m,
        trial,
        p50_db: gain_loss_percentile(losses_db, 50.0)?,
        p90_db: gain_loss_percentile(losses_db, 90.0)?,
        p99_db: gain_loss_percentile(losses_db, 99.0)?,
        coverage: coverage_below(losses_db, REQUIRED_M_THRESHOLD_DB),
    })
}

/// Gain-loss percentiles per `(trial, M, algorithm)`.
///
/// Every algorithm in a trial scores the same test captures.
pub fn run_gainloss_vs_m(config: &ExperimentConfig) -> Result<Vec<GainLossRow>> {
    config.validate()?;
    let trials: Vec<(Dataset, Dataset, GainOracle)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let (train_set, test) = config.trial_data(&config.gen, config.cell_seed(&[TAG_GAINLOSS, t as u64]))?;
            let oracle = GainOracle::for_dataset(&test)?;
            Ok((train_set, test, oracle))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for t in 0..config.trials {
        for &m in &config.m_list {
            for algo in Algo::ALL {
                cells.push((t, m, algo));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(t, m, algo)| {
            let (train_set, test, oracle) = &trials[t];
            let train_config = TrainConfig {
                seed: config.cell_seed(&[TAG_TRAIN, TAG_GAINLOSS, t as u64, m as u64]),
                ..config.train.clone()
            };
            let pred = predict_all(algo, train_set, &raw_features(test, m)?, m, &train_config)?;
            loss_row(config, algo, m, t, &losses(oracle, test, &pred)?)
        })
        .collect()
}

// ---------------------------------------------------------------- array sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredMRow {
    pub scenario: String,
    pub algo: Algo,
    pub n_rx: usize,
    pub k: usize,
    pub trial: usize,
    pub required_m: Option<usize>,
}

pub const REQUIRED_M_HEADER: &str = "scenario,algo,n_rx,K,trial,required_m";

impl RequiredMRow {
    pub fn csv(&self) -> String {
        let m = self.required_m.map_or(String::new(), |m| m.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.scenario,
            self.algo.name(),
            self.n_rx,
            self.k,
            self.trial,
            m
        )
    }
}

/// Codebook size tracking the beamwidth: `ceil(0.9 N)` beams over 90 degrees.
pub fn scaled_codebook_size(n_rx: usize) -> usize {
    (0.9 * n_rx as f64).ceil() as usize
}

/// Generation settings for one array size of the scaling sweep.
pub fn array_gen_config(base: &GenConfig, n_rx: usize, m0: usize) -> GenConfig {
    GenConfig {
        n_rx,
        k: scaled_codebook_size(n_rx),
        m0,
        dft_range_deg: [-45.0, 45.0],
        aoa_range_deg: [-45.0, 45.0],
        impairment: ImpairmentConfig::none(),
        ..base.clone()
    }
}

/// Smallest scanned `M` meeting the coverage target, scanning upward.
fn scan_required_m(
    algo: Algo,
    ms: &[usize],
    train_set: &Dataset,
    test: &Dataset,
    oracle: &GainOracle,
    train_config: impl Fn(usize) -> TrainConfig,
) -> Result<Option<usize>> {
    for &m in ms {
        let pred = predict_all(algo, train_set, &raw_features(test, m)?, m, &train_config(m))?;
        if coverage_below(&losses(oracle, test, &pred)?, REQUIRED_M_THRESHOLD_DB) >= REQUIRED_M_COVERAGE {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Required measurement count per `(array size, trial, algorithm)`.
///
/// The sweep uses its own physics: no impairment, the configured RSS SNR,
/// AoA over the full codebook span. Scanning stops at the first qualifying
/// `M`, which is exactly the smallest one in the list.
pub fn run_required_m_vs_array(config: &ExperimentConfig) -> Result<Vec<RequiredMRow>> {
    config.validate()?;
    let mut ms = config.array_m_list.clone();
    ms.sort_unstable();
    ms.dedup();
    let m0 = *ms.last().expect("validated non-empty");

    let mut cells = Vec::new();
    for &n in &config.array_sizes {
        for t in 0..config.trials {
            for algo in Algo::ALL {
                cells.push((n, t, algo));
            }
        }
    }
    let data: BTreeMap<(usize, usize), (Dataset, Dataset, GainOracle)> = config
        .array_sizes
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(n, t)| {
            let gen = array_gen_config(&config.gen, n, m0);
            let (train_set, test) = config.trial_data(&gen, config.cell_seed(&[TAG_ARRAY, n as u64, t as u64]))?;
            let oracle = GainOracle::for_dataset(&test)?;
            Ok(((n, t), (train_set, test, oracle)))
        })
        .collect::<Result<_>>()?;

    cells
        .into_par_iter()
        .map(|(n, t, algo)| {
            let (train_set, test, oracle) = &data[&(n, t)];
            let required = scan_required_m(algo, &ms, train_set, test, oracle, |m| TrainConfig {
                seed: config.cell_seed(&[TAG_TRAIN, TAG_ARRAY, n as u64, t as u64, m as u64]),
                ..config.train.clone()
            })?;
            Ok(RequiredMRow {
                scenario: config.scenario.clone(),
                algo,
                n_rx: n,
                k: train_set.meta.config.k,
                trial: t,
                required_m: required,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- beam pattern

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPatternRow {
    pub angle_deg: f64,
    pub dft_model_db: f64,
    pub dft_impaired_db: f64,
    pub pn_model_db: f64,
    pub pn_impaired_db: f64,
}

pub const BEAM_PATTERN_HEADER: &str = "angle_deg,dft_model_db,dft_impaired_db,pn_model_db,pn_impaired_db";

impl BeamPatternRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.angle_deg, self.dft_model_db, self.dft_impaired_db, self.pn_model_db, self.pn_impaired_db
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPatternSummary {
    pub dft_index: usize,
    pub pn_index: usize,
    pub dft_steering_deg: f64,
    pub dft_grid_step_deg: f64,
    pub dft_peak_model_deg: f64,
    pub dft_peak_impaired_deg: f64,
    /// Mean |impaired - model| in dB over the DFT mainlobe (null to null).
    pub dft_mainlobe_dev_db: f64,
    /// Mean |impaired - model| in dB over the whole PN pattern.
    pub pn_dev_db: f64,
}

impl BeamPatternSummary {
    pub fn peak_shift_deg(&self) -> f64 {
        (self.dft_peak_impaired_deg - self.dft_peak_model_deg).abs()
    }

    /// Mainlobe stays put while the PN pattern distorts more.
    pub fn ordering_holds(&self) -> bool {
        self.peak_shift_deg() < self.dft_grid_step_deg && self.pn_dev_db > self.dft_mainlobe_dev_db
    }
}

fn to_db(power: &[f64], n: f64, floor_db: f64) -> Vec<f64> {
    power.iter().map(|&p| (10.0 * (p / n).log10()).max(floor_db)).collect()
}

fn argmax_angle(angles: &[f64], values: &[f64]) -> f64 {
    let (mut best, mut at) = (f64::NEG_INFINITY, angles[0]);
    for (&a, &v) in angles.iter().zip(values) {
        if v > best {
            best = v;
            at = a;
        }
    }
    at
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Model vs impaired patterns of one directional and one PN codeword.
pub fn run_beam_pattern(config: &ExperimentConfig) -> Result<(Vec<BeamPatternRow>, BeamPatternSummary)> {
    config.gen.validate()?;
    let bp = &config.beam_pattern;
    if !(bp.grid_step_deg > 0.0) {
        return Err(Error::InvalidConfig("grid_step_deg must be positive".into()));
    }
    let g = config.gen.geometry()?;
    let dft = config.gen.dft()?;
    let pn = config.gen.pn()?;
    let e = draw_impairment(&config.gen.impairment, &g)?;
    let dft_angles = dft.angles_deg.clone().unwrap_or_default();
    let dft_index = match bp.dft_index {
        Some(i) => i,
        None => (0..dft_angles.len())
            .min_by(|&a, &b| dft_angles[a].abs().total_cmp(&dft_angles[b].abs()))
            .unwrap_or(0),
    };
    let (Some(w_dft), Some(w_pn)) = (dft.codewords.get(dft_index), pn.codewords.get(bp.pn_index)) else {
        return Err(Error::Domain(format!(
            "codeword index out of range (dft {dft_index}, pn {})",
            bp.pn_index
        )));
    };

    let steps = (179.8 / bp.grid_step_deg).floor() as usize;
    let angles: Vec<f64> = (0..=steps).map(|i| -89.9 + i as f64 * bp.grid_step_deg).collect();
    let n = g.n_elements as f64;
    let pattern =
        |w: &crate::codebook::Awv| -> Result<Vec<f64>> { Ok(to_db(&beam_pattern(w, &g, &angles)?, n, bp.floor_db)) };
    let dft_model = pattern(w_dft)?;
    let dft_impaired = pattern(&crate::array::apply_impairment(&e, w_dft)?)?;
    let pn_model = pattern(w_pn)?;
    let pn_impaired = pattern(&crate::array::apply_impairment(&e, w_pn)?)?;

    // First nulls of a uniform-amplitude beam sit at sin offsets of 1 / (N d).
    let steer = dft_angles[dft_index];
    let half = 1.0 / (n * g.spacing_over_wavelength);
    let s0 = steer.to_radians().sin();
    let lobe: Vec<usize> = (0..angles.len())
        .filter(|&i| (angles[i].to_radians().sin() - s0).abs() < half)
        .collect();
    let pick = |v: &[f64]| lobe.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let lobe_angles = pick(&angles);

    let summary = BeamPatternSummary {
        dft_index,
        pn_index: bp.pn_index,
        dft_steering_deg: steer,
        dft_grid_step_deg: if dft_angles.len() > 1 {
            dft_angles[1] - dft_angles[0]
        } else {
            0.0
        },
        dft_peak_model_deg: argmax_angle(&lobe_angles, &pick(&dft_model)),
        dft_peak_impaired_deg: argmax_angle(&lobe_angles, &pick(&dft_impaired)),
        dft_mainlobe_dev_db: mean_abs_diff(&pick(&dft_model), &pick(&dft_impaired)),
        pn_dev_db: mean_abs_diff(&pn_model, &pn_impaired),
    };
    let rows = (0..angles.len())
        .map(|i| BeamPatternRow {
            angle_deg: angles[i],
            dft_model_db: dft_model[i],
            dft_impaired_db: dft_impaired[i],
            pn_model_db: pn_model[i],
            pn_impaired_db: pn_impaired[i],
        })
        .collect();
    Ok((rows, summary))
}

/// Render rows under a header, one line each.
pub fn to_csv<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Reproducibility record written next to sweep outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, outputs: &[&str]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}
