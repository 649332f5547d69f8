use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

pub const HIDDEN1: usize = 64;
pub const HIDDEN2: usize = 128;
pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const NORMALIZATION_TAG: &str = "per-sample max";

/// Trainable tensors in the order used by [`Gradients`] and the optimizer.
pub const TENSOR_NAMES: [&str; 10] = [
    "fc1.weights",
    "fc1.bias",
    "bn1.gamma",
    "bn1.beta",
    "fc2.weights",
    "fc2.bias",
    "bn2.gamma",
    "bn2.beta",
    "fc3.weights",
    "fc3.bias",
];

/// Row-major dense matrix; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Divide by the maximum; the output peaks at exactly 1.
pub fn normalize_features(p: &[f64]) -> Result<Vec<f64>> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Domain(
            "cannot normalize a feature vector without a positive maximum".into(),
        ));
    }
    Ok(p.iter().map(|v| v / max).collect())
}

pub fn param_count(m: usize, k: usize) -> usize {
    64 * m + 129 * k + 8768
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out x n_in`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.n_out);
        for b in 0..x.rows {
            let xr = x.row(b);
            let or = out.row_mut(b);
            for (o, w) in self.weights.chunks_exact(self.n_in).enumerate() {
                or[o] = self.bias[o] + w.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        out
    }

    /// Returns (dW, db, dX) for upstream gradient `dz`.
    fn backward(&self, x: &Matrix, dz: &Matrix, need_dx: bool) -> (Vec<f64>, Vec<f64>, Option<Matrix>) {
        let mut dw = vec![0.0; self.weights.len()];
        let mut db = vec![0.0; self.n_out];
        let mut dx = need_dx.then(|| Matrix::zeros(x.rows, self.n_in));
        for b in 0..x.rows {
            let xr = x.row(b);
            let dzr = dz.row(b);
            for (o, &g) in dzr.iter().enumerate() {
                db[o] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &mut dw[o * self.n_in..(o + 1) * self.n_in];
                for (d, &xv) in row.iter_mut().zip(xr) {
                    *d += g * xv;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxr = dx.row_mut(b);
                for (o, &g) in dzr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
                    for (d, &wv) in dxr.iter_mut().zip(w) {
                        *d += g * wv;
                    }
                }
            }
        }
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }

    fn len(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-layer batch statistics and normalized activations kept for backprop.
#[derive(Debug, Clone)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn bn_train(bn: &BatchNorm, z: &Matrix) -> (Matrix, BnCache) {
    let n = z.rows as f64;
    let width = bn.len();
    let mut mean = vec![0.0; width];
    for b in 0..z.rows {
        for (m, v) in mean.iter_mut().zip(z.row(b)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for b in 0..z.rows {
        for ((s, v), m) in var.iter_mut().zip(z.row(b)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = Matrix::zeros(z.rows, width);
    let mut y = Matrix::zeros(z.rows, width);
    for b in 0..z.rows {
        for j in 0..width {
            let h = (z.row(b)[j] - mean[j]) * inv_std[j];
            xhat.row_mut(b)[j] = h;
            y.row_mut(b)[j] = bn.gamma[j] * h + bn.beta[j];
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

fn bn_infer(bn: &BatchNorm, z: &Matrix) -> Matrix {
    let mut y = Matrix::zeros(z.rows, bn.len());
    let scale: Vec<f64> = bn
        .gamma
        .iter()
        .zip(&bn.running_var)
        .map(|(g, v)| g / (v + BN_EPSILON).sqrt())
        .collect();
    for b in 0..z.rows {
        for (j, out) in y.row_mut(b).iter_mut().enumerate() {
            *out = (z.row(b)[j] - bn.running_mean[j]) * scale[j] + bn.beta[j];
        }
    }
    y
}

/// Returns (dgamma, dbeta, dz).
fn bn_backward(bn: &BatchNorm, cache: &BnCache, dy: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let n = dy.rows as f64;
    let width = bn.len();
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    for b in 0..dy.rows {
        for j in 0..width {
            let g = dy.row(b)[j];
            dgamma[j] += g * cache.xhat.row(b)[j];
            dbeta[j] += g;
        }
    }
    let mut dz = Matrix::zeros(dy.rows, width);
    for b in 0..dy.rows {
        for j in 0..width {
            let dxhat = dy.row(b)[j] * bn.gamma[j];
            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
            dz.row_mut(b)[j] = cache.inv_std[j] / n
                * (n * dxhat - bn.gamma[j] * dbeta[j] - cache.xhat.row(b)[j] * bn.gamma[j] * dgamma[j]);
        }
    }
    (dgamma, dbeta, dz)
}

fn relu(mut m: Matrix) -> Matrix {
    m.data.iter_mut().for_each(|v| *v = v.max(0.0));
    m
}

fn relu_backward(activated: &Matrix, mut grad: Matrix) -> Matrix {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub n_features: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub normalization: String,
    /// Class index -> DFT beam index of the training data.
    #[serde(default)]
    pub label_map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    pub meta: NetworkMeta,
    pub fc1: Dense,
    pub bn1: BatchNorm,
    pub fc2: Dense,
    pub bn2: BatchNorm,
    pub fc3: Dense,
}

/// Gradients of the trainable tensors, ordered as [`TENSOR_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Intermediate activations of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    bn1: BnCache,
    a1: Matrix,
    bn2: BnCache,
    a2: Matrix,
    pub logits: Matrix,
}

impl NetworkParameters {
    pub fn init(m: usize, k: usize, seed_value: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("network needs at least one input feature".into()));
        }
        if k < 2 {
            return Err(Error::InvalidConfig(format!(
                "network needs at least 2 classes, got {k}"
            )));
        }
        Ok(Self {
            meta: NetworkMeta {
                n_features: m,
                n_classes: k,
                seed: seed_value,
                normalization: NORMALIZATION_TAG.into(),
                label_map: (0..k).collect(),
            },
            fc1: Dense::init(m, HIDDEN1, &mut seed::rng_at(seed_value, &[1])),
            bn1: BatchNorm::new(HIDDEN1),
            fc2: Dense::init(HIDDEN1, HIDDEN2, &mut seed::rng_at(seed_value, &[2])),
            bn2: BatchNorm::new(HIDDEN2),
            fc3: Dense::init(HIDDEN2, k, &mut seed::rng_at(seed_value, &[3])),
        })
    }

    pub fn trainable(&self) -> [&Vec<f64>; 10] {
        [
            &self.fc1.weights,
            &self.fc1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.fc2.weights,
            &self.fc2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.fc3.weights,
            &self.fc3.bias,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.fc1.weights,
            &mut self.fc1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.fc2.weights,
            &mut self.fc2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc3.weights,
            &mut self.fc3.bias,
        ]
    }

    /// Number of trainable scalars, counted from the tensors themselves.
    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Tensor shapes agree with the metadata.
    pub fn check_architecture(&self) -> Result<()> {
        let (m, k) = (self.meta.n_features, self.meta.n_classes);
        let expected = [
            ("fc1", &self.fc1, m, HIDDEN1),
            ("fc2", &self.fc2, HIDDEN1, HIDDEN2),
            ("fc3", &self.fc3, HIDDEN2, k),
        ];
        for (name, layer, n_in, n_out) in expected {
            if layer.n_in != n_in
                || layer.n_out != n_out
                || layer.weights.len() != n_in * n_out
                || layer.bias.len() != n_out
            {
                return Err(Error::ArchitectureMismatch(format!(
                    "{name}: expected {n_out}x{n_in}, found {}x{} with {} weights",
                    layer.n_out,
                    layer.n_in,
                    layer.weights.len()
                )));
            }
        }
        for (name, bn, n) in [("bn1", &self.bn1, HIDDEN1), ("bn2", &self.bn2, HIDDEN2)] {
            if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                .iter()
                .any(|t| t.len() != n)
            {
                return Err(Error::ArchitectureMismatch(format!("{name}: expected width {n}")));
            }
            if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::ArchitectureMismatch(format!(
                    "{name}: running variance must be positive"
                )));
            }
        }
        if !self.meta.label_map.is_empty() && self.meta.label_map.len() != k {
            return Err(Error::ArchitectureMismatch(format!(
                "label map has {} entries for {k} classes",
                self.meta.label_map.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.meta.n_features {
            return Err(Error::LengthMismatch {
                expected: self.meta.n_features,
                found: x.cols,
            });
        }
        if x.rows == 0 {
            return Err(Error::Empty("input batch".into()));
        }
        Ok(())
    }

    /// Train-mode forward pass with batch statistics; parameters untouched.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        if x.rows < 2 {
            return Err(Error::Domain(
                "train-mode batch normalization needs a batch of at least 2".into(),
            ));
        }
        let (y1, bn1) = bn_train(&self.bn1, &self.fc1.forward(x));
        let a1 = relu(y1);
        let (y2, bn2) = bn_train(&self.bn2, &self.fc2.forward(&a1));
        let a2 = relu(y2);
        let logits = self.fc3.forward(&a2);
        Ok(ForwardCache {
            x: x.clone(),
            bn1,
            a1,
            bn2,
            a2,
            logits,
        })
    }

    /// Infer-mode forward pass using running statistics.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let a1 = relu(bn_infer(&self.bn1, &self.fc1.forward(x)));
        let a2 = relu(bn_infer(&self.bn2, &self.fc2.forward(&a1)));
        Ok(self.fc3.forward(&a2))
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => {
                let cache = self.forward_cached(x)?;
                self.update_running_stats(&cache);
                Ok(cache.logits)
            }
        }
    }

    /// Exponential moving average of the batch statistics (unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let n = cache.x.rows as f64;
        let correction = n / (n - 1.0);
        for (bn, c) in [(&mut self.bn1, &cache.bn1), (&mut self.bn2, &cache.bn2)] {
            for j in 0..bn.len() {
                bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * c.mean[j];
                bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * c.var[j] * correction;
            }
        }
    }

    /// Mean cross-entropy loss and gradients of every trainable tensor.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, Gradients)> {
        let logits = &cache.logits;
        if labels.len() != logits.rows {
            return Err(Error::LengthMismatch {
                expected: logits.rows,
                found: labels.len(),
            });
        }
        let n = logits.rows as f64;
        let mut dz3 = Matrix::zeros(logits.rows, logits.cols);
        let mut loss = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            if label >= logits.cols {
                return Err(Error::Domain(format!("label {label} outside {} classes", logits.cols)));
            }
            let row = logits.row(b);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += max + sum.ln() - row[label];
            let d = dz3.row_mut(b);
            for (j, v) in row.iter().enumerate() {
                d[j] = (v - max).exp() / sum / n;
            }
            d[label] -= 1.0 / n;
        }
        loss /= n;

        let (dw3, db3, da2) = self.fc3.backward(&cache.a2, &dz3, true);
        let dy2 = relu_backward(&cache.a2, da2.expect("requested"));
        let (dg2, dbeta2, dz2) = bn_backward(&self.bn2, &cache.bn2, &dy2);
        let (dw2, db2, da1) = self.fc2.backward(&cache.a1, &dz2, true);
        let dy1 = relu_backward(&cache.a1, da1.expect("requested"));
        let (dg1, dbeta1, dz1) = bn_backward(&self.bn1, &cache.bn1, &dy1);
        let (dw1, db1, _) = self.fc1.backward(&cache.x, &dz1, false);

        Ok((
            loss,
            Gradients {
                tensors: vec![dw1, db1, dg1, dbeta1, dw2, db2, dg2, dbeta2, dw3, db3],
            },
        ))
    }

    /// Train-mode loss without touching running statistics.
    pub fn train_loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let cache = self.forward_cached(x)?;
        cross_entropy(&cache.logits, labels)
    }
}

/// Mean `-log softmax(logits)[label]` over the batch.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows {
        return Err(Error::LengthMismatch {
            expected: logits.rows,
            found: labels.len(),
        });
    }
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= logits.cols {
            return Err(Error::Domain(format!("label {label} outside {} classes", logits.cols)));
        }
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}
