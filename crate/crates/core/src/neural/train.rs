use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{normalize_features, Gradients, Matrix, NetworkParameters};
use crate::dataset::{assign_label, truncate_features, Dataset};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rms_decay: 0.9,
            epsilon: 1e-7,
            batch_size: 32,
            max_epochs: 200,
            early_stop_patience: 20,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.rms_decay, self.epsilon];
        if positive.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || self.rms_decay >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "optimizer settings out of range: {self:?}"
            )));
        }
        if self.batch_size < 2 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size must be >= 2 and max_epochs >= 1".into(),
            ));
        }
        if self.early_stop_patience == 0 || self.early_stop_patience >= self.max_epochs {
            return Err(Error::InvalidConfig(
                "early_stop_patience must be in 1..max_epochs".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for i in 0..self.epochs() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.train_accuracy[i],
                self.val_accuracy[i]
            ));
        }
        out
    }
}

/// `v <- rho v + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    velocity: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &NetworkParameters, config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            rho: config.rms_decay,
            epsilon: config.epsilon,
            velocity: params.trainable().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParameters, grads: &Gradients) {
        for ((theta, g), v) in params
            .trainable_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.velocity)
        {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.rho * *vi + (1.0 - self.rho) * gi * gi;
                *t -= self.learning_rate * gi / (vi.sqrt() + self.epsilon);
            }
        }
    }
}

/// One minibatch update; returns the batch loss and the train-mode logits'
/// correct-prediction count.
pub fn backward_and_step(
    params: &mut NetworkParameters,
    x: &Matrix,
    labels: &[usize],
    optimizer: &mut RmsProp,
) -> Result<(f64, usize)> {
    let cache = params.forward_cached(x)?;
    let (loss, grads) = params.backward(&cache, labels)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} or gradient diverged")));
    }
    let correct = (0..x.rows)
        .filter(|&b| assign_label(cache.logits.row(b)).ok() == Some(labels[b]))
        .count();
    params.update_running_stats(&cache);
    optimizer.step(params, &grads);
    Ok((loss, correct))
}

fn prepare(raw: &[f64], m: usize) -> Result<Vec<f64>> {
    normalize_features(truncate_features(raw, m)?)
}

/// Stratified holdout; labels with a single point stay in training.
fn holdout(labels: &[usize], fraction: f64, seed_value: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_label = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_label[l].push(i);
    }
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for (l, mut idx) in by_label.into_iter().enumerate() {
        idx.shuffle(&mut seed::rng_at(seed_value, &[0xA1, l as u64]));
        let n_val = if idx.len() < 2 {
            0
        } else {
            ((fraction * idx.len() as f64).round() as usize).min(idx.len() - 1)
        };
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

fn batch(features: &[Vec<f64>], idx: &[usize]) -> Matrix {
    let cols = features[idx[0]].len();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&features[i]);
    }
    Matrix {
        rows: idx.len(),
        cols,
        data,
    }
}

fn infer_accuracy(params: &NetworkParameters, features: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let logits = params.forward_infer(&batch(features, idx))?;
    let correct = idx
        .iter()
        .enumerate()
        .filter(|(b, &i)| assign_label(logits.row(*b)).ok() == Some(labels[i]))
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Train on the first `m` PN measurements of every point.
///
/// Minibatches are reshuffled each epoch from a seeded stream. A stratified
/// validation holdout drives early stopping; the best-validation parameters
/// are returned. Captures whose features are all zero are skipped.
pub fn train(train_set: &Dataset, m: usize, config: &TrainConfig) -> Result<(NetworkParameters, TrainHistory)> {
    config.validate()?;
    let k = train_set.n_classes();
    let mut features = Vec::with_capacity(train_set.len());
    let mut labels = Vec::with_capacity(train_set.len());
    for p in &train_set.points {
        match prepare(&p.pn_rss, m) {
            Ok(f) => {
                features.push(f);
                labels.push(p.label);
            }
            Err(Error::Domain(_)) if m <= p.pn_rss.len() => continue,
            Err(e) => return Err(e),
        }
    }
    if features.len() < 2 {
        return Err(Error::Empty("training set needs at least 2 usable captures".into()));
    }

    let (mut fit, val) = holdout(&labels, config.val_fraction, config.seed);
    let mut params = NetworkParameters::init(m, k, config.seed)?;
    params.meta.label_map = train_set.meta.label_map.clone();
    let mut optimizer = RmsProp::new(&params, config);
    let mut history = TrainHistory::default();
    let mut best = (f64::NEG_INFINITY, params.clone());

    for epoch in 0..config.max_epochs {
        fit.shuffle(&mut seed::rng_at(config.seed, &[0xE0, epoch as u64]));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in fit.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, hits) = backward_and_step(&mut params, &batch(&features, chunk), &chunk_labels, &mut optimizer)?;
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
            seen += chunk.len();
        }
        let seen = seen.max(1) as f64;
        history.train_loss.push(loss_sum / seen);
        history.train_accuracy.push(correct as f64 / seen);
        let val_acc = if val.is_empty() {
            history.train_accuracy[epoch]
        } else {
            infer_accuracy(&params, &features, &labels, &val)?
        };
        history.val_accuracy.push(val_acc);

        if val_acc > best.0 {
            best = (val_acc, params.clone());
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.early_stop_patience {
            break;
        }
    }
    Ok((best.1, history))
}

/// Class index from raw RSS of length `M`.
pub fn predict(params: &NetworkParameters, raw_features: &[f64]) -> Result<usize> {
    if raw_features.len() != params.meta.n_features {
        return Err(Error::LengthMismatch {
            expected: params.meta.n_features,
            found: raw_features.len(),
        });
    }
    let x = Matrix::from_rows(&[normalize_features(raw_features)?])?;
    assign_label(params.forward_infer(&x)?.row(0))
}

/// Batched [`predict`]; `None` where the features cannot be normalized.
pub fn predict_batch(params: &NetworkParameters, raw: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let mut rows = Vec::with_capacity(raw.len());
    let mut slots = Vec::with_capacity(raw.len());
    for r in raw {
        if r.len() != params.meta.n_features {
            return Err(Error::LengthMismatch {
                expected: params.meta.n_features,
                found: r.len(),
            });
        }
        match normalize_features(r) {
            Ok(f) => {
                slots.push(Some(rows.len()));
                rows.push(f);
            }
            Err(_) => slots.push(None),
        }
    }
    if rows.is_empty() {
        return Ok(vec![None; raw.len()]);
    }
    let logits = params.forward_infer(&Matrix::from_rows(&rows)?)?;
    slots
        .into_iter()
        .map(|s| s.map(|b| assign_label(logits.row(b))).transpose())
        .collect()
}

const MODEL_FORMAT: &str = "beamalign-model";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    params: NetworkParameters,
}

pub fn save_model(params: &NetworkParameters, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut out,
        &ModelFile {
            format: MODEL_FORMAT.into(),
            version: 1,
            params: params.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Load a model; `expected_features` guards against feeding it the wrong `M`.
pub fn load_model(path: impl AsRef<Path>, expected_features: Option<usize>) -> Result<NetworkParameters> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::parse(1, format!("unknown model format {:?}", file.format)));
    }
    file.params.check_architecture()?;
    if let Some(m) = expected_features {
        if m != file.params.meta.n_features {
            return Err(Error::ArchitectureMismatch(format!(
                "model expects M = {}, caller uses M = {m}",
                file.params.meta.n_features
            )));
        }
    }
    Ok(file.params)
}
