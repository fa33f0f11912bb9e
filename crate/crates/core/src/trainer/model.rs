//! Multinomial logistic regression over sparse features.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::dataset::SparseVector;

/// Parameters of the softmax classifier after a given epoch.
///
/// `weights` is row-major, one row of `feature_dim` entries per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    num_classes: u32,
    feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub epoch: u32,
}

impl ModelState {
    pub fn zeros(num_classes: u32, feature_dim: usize) -> Self {
        ModelState {
            num_classes,
            feature_dim,
            weights: vec![0.0; num_classes as usize * feature_dim],
            bias: vec![0.0; num_classes as usize],
            epoch: 0,
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.feature_dim + feature]
    }

    #[inline]
    pub fn weight_mut(&mut self, class: usize, feature: usize) -> &mut f64 {
        &mut self.weights[class * self.feature_dim + feature]
    }

    fn check_dim(&self, x: &SparseVector) -> Result<()> {
        if x.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.num_classes as usize)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                self.bias[c]
                    + x.entries()
                        .iter()
                        .map(|&(j, v)| row[j as usize] * v)
                        .sum::<f64>()
            })
            .collect())
    }

    /// Softmax class distribution for `x`.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &SparseVector) -> Result<u32> {
        Ok(argmax(&self.logits(x)?))
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.weights.iter().chain(&self.bias) {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Squared L2 norm of the weights (bias excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(sum(exp(z)))` without overflow.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Gradient of the mean cross-entropy over a batch, plus the L2 coefficient.
///
/// Only features present in the batch carry a data term; the L2 term
/// `l2 * W` applies to every weight.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub num_classes: usize,
    pub l2: f64,
    pub bias: Vec<f64>,
    /// Feature index -> per-class data term.
    pub data: BTreeMap<u32, Vec<f64>>,
}

impl Gradient {
    /// Full derivative of the regularized objective w.r.t. `W[class][feature]`.
    pub fn weight(&self, model: &ModelState, class: usize, feature: usize) -> f64 {
        let data = self.data.get(&(feature as u32)).map_or(0.0, |g| g[class]);
        data + self.l2 * model.weight(class, feature)
    }
}

/// Mean cross-entropy of `batch` and its gradient. Contributions accumulate
/// in batch order.
pub fn batch_gradient(
    model: &ModelState,
    batch: &[(&SparseVector, u32)],
    l2: f64,
) -> Result<(f64, Gradient)> {
    let c = model.num_classes as usize;
    let mut grad = Gradient {
        num_classes: c,
        l2,
        bias: vec![0.0; c],
        data: BTreeMap::new(),
    };
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(x, gold) in batch {
        let logits = model.logits(x)?;
        loss += log_sum_exp(&logits) - logits[gold as usize];
        let probs = softmax(&logits);
        let residual: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| (p - if k as u32 == gold { 1.0 } else { 0.0 }) * scale)
            .collect();
        for (k, r) in residual.iter().enumerate() {
            grad.bias[k] += r;
        }
        for &(j, v) in x.entries() {
            let slot = grad.data.entry(j).or_insert_with(|| vec![0.0; c]);
            for (k, r) in residual.iter().enumerate() {
                slot[k] += r * v;
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Regularized objective: mean cross-entropy plus `l2 / 2 * |W|^2`.
pub fn objective(model: &ModelState, batch: &[(&SparseVector, u32)], l2: f64) -> Result<f64> {
    let (ce, _) = batch_gradient(model, batch, 0.0)?;
    Ok(ce + 0.5 * l2 * model.weight_norm_sq())
}

/// One gradient-descent step: `W <- W - lr * (data + l2 * W)`, `b <- b - lr * g_b`.
pub fn apply_gradient(model: &mut ModelState, grad: &Gradient, learning_rate: f64) {
    if grad.l2 != 0.0 {
        let decay = learning_rate * grad.l2;
        for w in &mut model.weights {
            *w -= decay * *w;
        }
    }
    for (k, g) in grad.bias.iter().enumerate() {
        model.bias[k] -= learning_rate * g;
    }
    for (&j, g) in &grad.data {
        for (k, gk) in g.iter().enumerate() {
            *model.weight_mut(k, j as usize) -= learning_rate * gk;
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "cartograph-model";

/// Portable JSON checkpoint. Only nonzero weights are stored, as
/// `[class, feature, value]` triples.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    num_classes: u32,
    feature_dim: usize,
    epoch: u32,
    bias: Vec<f64>,
    weights: Vec<(u32, u32, f64)>,
}

impl ModelState {
    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        let d = self.feature_dim;
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            num_classes: self.num_classes,
            feature_dim: d,
            epoch: self.epoch,
            bias: self.bias.clone(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| ((i / d) as u32, (i % d) as u32, *w))
                .collect(),
        };
        serde_json::to_writer(sink, &ckpt)?;
        Ok(())
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(source)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != 1 {
            return Err(Error::InvalidArgument(format!(
                "not a {CHECKPOINT_FORMAT} v1 checkpoint"
            )));
        }
        if ckpt.bias.len() != ckpt.num_classes as usize {
            return Err(Error::DimensionMismatch {
                expected: ckpt.num_classes as usize,
                got: ckpt.bias.len(),
            });
        }
        let mut m = ModelState::zeros(ckpt.num_classes, ckpt.feature_dim);
        m.bias = ckpt.bias;
        m.epoch = ckpt.epoch;
        for (c, j, w) in ckpt.weights {
            if c >= ckpt.num_classes || j as usize >= ckpt.feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "weight index ({c}, {j}) out of range"
                )));
            }
            *m.weight_mut(c as usize, j as usize) = w;
        }
        Ok(m)
    }
}
