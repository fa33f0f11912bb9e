//! Desk-scale softmax classifier that records its own training dynamics.
//!
//! Training is plain mini-batch SGD on the L2-regularized cross-entropy.
//! After each epoch's updates the frozen model makes one pass over the whole
//! train split and a [`SnapshotRecord`] is written for every instance, in
//! guid order. That pass never touches the parameters.
//!
//! Early stopping: training halts once validation accuracy has failed to
//! beat the best value so far by more than `improvement_epsilon` for
//! `patience` consecutive epochs. The returned model is always the last one
//! trained; `keep_best` additionally retains the best-validation model.

pub mod dataset;
pub mod model;

use std::io::{Read, Write};

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynlog::{LogWriter, RunMeta, SnapshotRecord};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{seeded, Stream};

pub use dataset::{featurize, tokenize, Dataset, Example, SparseVector, Split};
pub use model::{
    apply_gradient, argmax, batch_gradient, log_sum_exp, objective, softmax, Gradient, ModelState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub patience: u32,
    pub improvement_epsilon: f64,
    pub seed: u64,
    /// Hash buckets used when featurizing text.
    pub feature_dim: usize,
    /// Also return the best-validation model.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 96,
            learning_rate: 0.1,
            l2: 1e-4,
            patience: 10,
            improvement_epsilon: 0.0,
            seed: 0,
            feature_dim: 1 << 18,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.patience < 1 {
            return fail("patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.improvement_epsilon.is_nan() || self.improvement_epsilon < 0.0 {
            return fail("improvement_epsilon must be non-negative".into());
        }
        if self.feature_dim < 2 {
            return fail("feature_dim must be at least 2".into());
        }
        Ok(())
    }

    /// Parse a `key = value` config file. Missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }
}

/// Accuracy and loss after one completed epoch. `epoch` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: u32,
    pub train_acc: f64,
    pub val_acc: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveLog {
    pub rows: Vec<CurveRow>,
}

impl CurveLog {
    /// CSV with header `epoch,train_acc,val_acc,mean_loss`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["epoch", "train_acc", "val_acc", "mean_loss"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<CurveRow>, _>>()?;
        Ok(CurveLog { rows })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last completed epoch.
    pub model: ModelState,
    /// Best-validation model, when `keep_best` was set.
    pub best_model: Option<ModelState>,
    pub curves: CurveLog,
    pub best_epoch: u32,
    pub epochs_completed: u32,
    pub stopped_early: bool,
}

/// Header metadata for a training run on `dataset`.
pub fn run_meta(dataset: &Dataset, config: &TrainConfig, run_id: &str) -> RunMeta {
    RunMeta::new(
        run_id,
        dataset.name.clone(),
        dataset.num_classes(),
        config.epochs,
    )
    .with_train_instances(dataset.split_len(Split::Train) as u64)
}

struct Snapshot {
    p_gold: f64,
    pred: u32,
    loss: f64,
}

fn snapshot(model: &ModelState, ex: &Example) -> Result<Snapshot> {
    let logits = model.logits(&ex.features)?;
    let probs = softmax(&logits);
    Ok(Snapshot {
        p_gold: probs[ex.gold as usize],
        pred: argmax(&logits),
        loss: log_sum_exp(&logits) - logits[ex.gold as usize],
    })
}

/// Frozen-model pass over the train split in guid order: one record per
/// instance for `epoch`, paired with its cross-entropy loss. Takes the
/// model by shared reference, so parameters cannot change.
pub fn snapshot_pass(
    model: &ModelState,
    dataset: &Dataset,
    epoch: u32,
    exec: Execution,
) -> Result<Vec<(SnapshotRecord, f64)>> {
    let train_split = dataset.split(Split::Train);
    let snaps = exec
        .map(&train_split, |ex| snapshot(model, ex))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(train_split
        .iter()
        .zip(snaps)
        .map(|(ex, s)| {
            (
                SnapshotRecord {
                    epoch,
                    guid: ex.guid.clone(),
                    gold: ex.gold,
                    p_gold: s.p_gold,
                    pred: s.pred,
                },
                s.loss,
            )
        })
        .collect())
}

/// Train on the train split, writing one snapshot per instance per epoch to
/// `sink` as a dynamics log.
///
/// `num_classes`, `planned_epochs` and `num_train_instances` of `meta` are
/// overwritten from the dataset and config.
pub fn train<W: Write>(
    dataset: &Dataset,
    config: &TrainConfig,
    mut meta: RunMeta,
    sink: W,
) -> Result<TrainOutcome> {
    train_with(dataset, config, &mut meta, sink, Execution::default())
}

pub fn train_with<W: Write>(
    dataset: &Dataset,
    config: &TrainConfig,
    meta: &mut RunMeta,
    sink: W,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.check()?;
    let train_split = dataset.split(Split::Train);
    let val_split = dataset.split(Split::Validation);
    if train_split.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    if val_split.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    meta.num_classes = dataset.num_classes();
    meta.planned_epochs = config.epochs;
    meta.num_train_instances = train_split.len() as u64;
    let mut log = LogWriter::new(sink, meta.clone())?;

    let mut model = ModelState::zeros(dataset.num_classes(), dataset.feature_dim());
    let mut curves = CurveLog::default();
    let mut best: Option<(f64, u32)> = None;
    let mut best_model = None;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_split.len()).collect();
        order.shuffle(&mut seeded(config.seed, Stream::Shuffle(epoch)));

        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&SparseVector, u32)> = chunk
                .iter()
                .map(|&i| (&train_split[i].features, train_split[i].gold))
                .collect();
            let (loss, grad) = batch_gradient(&model, &batch, config.l2)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    message: format!(
                        "batch loss {loss}; lower the learning rate (now {})",
                        config.learning_rate
                    ),
                });
            }
            apply_gradient(&mut model, &grad, config.learning_rate);
        }
        model.epoch = epoch;
        if !model.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                message: format!(
                    "non-finite parameters; lower the learning rate (now {})",
                    config.learning_rate
                ),
            });
        }

        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for (rec, loss) in snapshot_pass(&model, dataset, epoch, exec)? {
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    message: format!("loss of {:?} is {loss}", rec.guid),
                });
            }
            correct += usize::from(rec.pred == rec.gold);
            loss_sum += loss;
            log.append_snapshot(&rec)?;
        }
        log.flush()?;

        let n = train_split.len() as f64;
        let val_acc = accuracy_of(&model, &val_split, exec)?;
        let row = CurveRow {
            epoch,
            train_acc: correct as f64 / n,
            val_acc,
            mean_loss: loss_sum / n,
        };
        debug!(
            "epoch {epoch}: train_acc {:.4} val_acc {:.4} loss {:.5}",
            row.train_acc, row.val_acc, row.mean_loss
        );
        curves.rows.push(row);

        match best {
            Some((best_acc, _)) if val_acc <= best_acc + config.improvement_epsilon => {}
            _ => {
                best = Some((val_acc, epoch));
                if config.keep_best {
                    best_model = Some(model.clone());
                }
            }
        }
        let best_epoch = best.map_or(0, |b| b.1);
        if epoch + 1 < config.epochs && epoch - best_epoch >= config.patience {
            info!("early stop after epoch {epoch}: no validation gain since epoch {best_epoch}");
            stopped_early = true;
            break;
        }
    }

    log.into_inner()?;
    let epochs_completed = curves.rows.len() as u32;
    Ok(TrainOutcome {
        model,
        best_model,
        curves,
        best_epoch: best.map_or(0, |b| b.1),
        epochs_completed,
        stopped_early,
    })
}

fn accuracy_of(model: &ModelState, examples: &[&Example], exec: Execution) -> Result<f64> {
    let hits = exec
        .map(examples, |ex| {
            model.predict(&ex.features).map(|p| p == ex.gold)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

/// Fraction of `split` whose argmax prediction equals the gold label.
pub fn evaluate(model: &ModelState, dataset: &Dataset, split: Split) -> Result<f64> {
    evaluate_with(model, dataset, split, Execution::default())
}

pub fn evaluate_with(
    model: &ModelState,
    dataset: &Dataset,
    split: Split,
    exec: Execution,
) -> Result<f64> {
    let examples = dataset.split(split);
    if examples.is_empty() {
        return Err(Error::Empty(format!("{split} split")));
    }
    accuracy_of(model, &examples, exec)
}
