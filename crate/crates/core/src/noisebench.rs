//! Planted label noise and how well the hard-to-learn ranking finds it.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::carto::rank_hard_to_learn;
use crate::dynamics::{compute_all, MetricsTable};
use crate::dynlog::{parse_log, ParseOptions, RunMeta};
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};
use crate::trainer::{train, Dataset, Split, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "noise rate {rate} outside [0, 1]"
            )));
        }
        Ok(NoiseSpec { rate, seed })
    }
}

/// Flip the gold label of `round(rate * n_train)` train instances to a
/// uniformly chosen different class. Instances are drawn over the
/// guid-sorted train split from the noise stream of `spec.seed`; other
/// splits are untouched. Returns the noisy copy and the flipped guids.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, BTreeSet<String>)> {
    NoiseSpec::new(spec.rate, spec.seed)?;
    let c = dataset.num_classes();
    if c < 2 {
        return Err(Error::InvalidArgument(
            "label flips need at least 2 classes".into(),
        ));
    }
    let train: Vec<String> = dataset
        .split(Split::Train)
        .iter()
        .map(|e| e.guid.clone())
        .collect();
    if train.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let n_flip = (spec.rate * train.len() as f64 + 0.5).floor() as usize;
    let n_flip = n_flip.min(train.len());

    let mut rng = seeded(spec.seed, Stream::Noise);
    let mut picks = rand::seq::index::sample(&mut rng, train.len(), n_flip).into_vec();
    picks.sort_unstable();
    // New labels are drawn in ascending guid order after the sample.
    let mut new_labels = std::collections::HashMap::with_capacity(n_flip);
    let flipped: BTreeSet<String> = picks.iter().map(|&i| train[i].clone()).collect();
    for guid in &flipped {
        let r: u32 = rng.random_range(0..c - 1);
        new_labels.insert(guid.as_str(), r);
    }

    let mut noisy = dataset.clone();
    for ex in noisy.examples_mut() {
        if ex.split != Split::Train {
            continue;
        }
        if let Some(&r) = new_labels.get(ex.guid.as_str()) {
            ex.gold = if r >= ex.gold { r + 1 } else { r };
        }
    }
    Ok((noisy, flipped))
}

/// Precision and recall of the hard-to-learn queue against planted flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub n_flipped: usize,
    pub n_instances: usize,
    pub k: usize,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub base_rate: f64,
    /// `precision_at_k / base_rate`; 0 when nothing was flipped.
    pub lift: f64,
    pub mean_confidence_flipped: f64,
    pub mean_confidence_clean: f64,
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| metric                  | value      |")?;
        writeln!(f, "|-------------------------|------------|")?;
        writeln!(f, "| instances               | {:>10} |", self.n_instances)?;
        writeln!(f, "| flipped                 | {:>10} |", self.n_flipped)?;
        writeln!(f, "| k                       | {:>10} |", self.k)?;
        writeln!(
            f,
            "| precision@k             | {:>10.4} |",
            self.precision_at_k
        )?;
        writeln!(
            f,
            "| recall@k                | {:>10.4} |",
            self.recall_at_k
        )?;
        writeln!(f, "| base rate               | {:>10.4} |", self.base_rate)?;
        writeln!(f, "| lift                    | {:>10.4} |", self.lift)?;
        writeln!(
            f,
            "| mean confidence flipped | {:>10.4} |",
            self.mean_confidence_flipped
        )?;
        writeln!(
            f,
            "| mean confidence clean   | {:>10.4} |",
            self.mean_confidence_clean
        )
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Score `rank_hard_to_learn(metrics, k)` against the flipped set.
pub fn eval_detection(
    metrics: &MetricsTable,
    flipped: &BTreeSet<String>,
    k: usize,
) -> Result<DetectionReport> {
    if let Some(g) = flipped.iter().find(|g| metrics.get(g).is_none()) {
        return Err(Error::UnknownGuid(g.clone()));
    }
    let n = metrics.len();
    let top = rank_hard_to_learn(metrics, k)?;
    let hits = top.iter().filter(|g| flipped.contains(*g)).count();
    let base_rate = flipped.len() as f64 / n as f64;
    let precision = hits as f64 / k as f64;
    let recall = if flipped.is_empty() {
        0.0
    } else {
        hits as f64 / flipped.len() as f64
    };
    let lift = if base_rate > 0.0 {
        precision / base_rate
    } else {
        warn!("no flipped instances: lift undefined, reported as 0");
        0.0
    };
    let (flipped_conf, clean_conf) = split_confidences(metrics, flipped);
    Ok(DetectionReport {
        n_flipped: flipped.len(),
        n_instances: n,
        k,
        precision_at_k: precision,
        recall_at_k: recall,
        base_rate,
        lift,
        mean_confidence_flipped: mean(&flipped_conf),
        mean_confidence_clean: mean(&clean_conf),
    })
}

/// Confidences of flipped and clean instances, in guid order.
pub fn split_confidences(
    metrics: &MetricsTable,
    flipped: &BTreeSet<String>,
) -> (Vec<f64>, Vec<f64>) {
    let mut f = Vec::new();
    let mut c = Vec::new();
    for r in &metrics.rows {
        if flipped.contains(&r.guid) {
            f.push(r.confidence);
        } else {
            c.push(r.confidence);
        }
    }
    (f, c)
}

/// One-sided permutation test for `mean(group_a) < mean(group_b)`.
///
/// Returns `(1 + #{resamples with gap <= observed}) / (1 + resamples)`,
/// where gap is `mean(a) - mean(b)` after randomly reassigning the pooled
/// values to groups of the original sizes.
pub fn permutation_p_value(group_a: &[f64], group_b: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    if group_a.is_empty() || group_b.is_empty() {
        return 1.0;
    }
    let observed = mean(group_a) - mean(group_b);
    let mut pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let total: f64 = pooled.iter().sum();
    let na = group_a.len();
    let nb = group_b.len() as f64;
    let mut rng = seeded(seed, Stream::Permutation);
    let mut at_least_as_extreme = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(&mut rng);
        let sa: f64 = pooled[..na].iter().sum();
        let gap = sa / na as f64 - (total - sa) / nb;
        if gap <= observed {
            at_least_as_extreme += 1;
        }
    }
    (1 + at_least_as_extreme) as f64 / (1 + resamples) as f64
}

/// Everything a benchmark run produced.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: DetectionReport,
    pub flipped: BTreeSet<String>,
    pub metrics: MetricsTable,
}

/// Inject noise, train, compute dynamics and score detection. `k = None`
/// uses the number of flipped instances (at least 1).
pub fn run_benchmark(
    dataset: &Dataset,
    config: &TrainConfig,
    noise: &NoiseSpec,
    k: Option<usize>,
) -> Result<BenchmarkRun> {
    let (noisy, flipped) = inject_noise(dataset, noise)?;
    let meta = RunMeta::new(
        format!(
            "noise-bench-r{}-s{}-n{}",
            noise.rate, config.seed, noise.seed
        ),
        dataset.name.clone(),
        dataset.num_classes(),
        config.epochs,
    );
    let mut buf = Vec::new();
    train(&noisy, config, meta, &mut buf)?;
    let log = parse_log(buf.as_slice(), ParseOptions::default())?;
    let metrics = compute_all(&log)?;
    let k = k.unwrap_or(flipped.len().max(1));
    let report = eval_detection(&metrics, &flipped, k)?;
    Ok(BenchmarkRun {
        report,
        flipped,
        metrics,
    })
}

impl BenchmarkRun {
    /// Report JSON to `report_sink`, flipped guids (one per line) to `flipped_sink`.
    pub fn write<W1: Write, W2: Write>(&self, report_sink: W1, mut flipped_sink: W2) -> Result<()> {
        serde_json::to_writer_pretty(report_sink, &self.report)?;
        for g in &self.flipped {
            writeln!(flipped_sink, "{g}")?;
        }
        Ok(())
    }
}
