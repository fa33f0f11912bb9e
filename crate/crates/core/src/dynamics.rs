//! Per-instance training-dynamics measures: confidence, variability and
//! correctness.
//!
//! Variability is the *population* standard deviation (divide by the number
//! of epochs, not by one less). Many statistics utilities default to the
//! sample form; the two differ noticeably at small epoch counts.
//!
//! Sums run in epoch-ascending order with plain accumulation, so results are
//! reproducible across platforms and across sequential/parallel execution.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynlog::{EpochPoint, RunLog, RunMeta};
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsMetrics {
    pub guid: String,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub epochs_used: u32,
}

/// One row per instance, sorted by guid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    /// Metadata of the source run, absent when read back from CSV.
    pub meta: Option<RunMeta>,
    pub rows: Vec<DynamicsMetrics>,
}

fn nonempty<T>(series: &[T]) -> Result<()> {
    if series.is_empty() {
        Err(Error::Empty("series has no epochs".into()))
    } else {
        Ok(())
    }
}

/// Mean gold-label probability over the observed epochs.
pub fn confidence(series: &[f64]) -> Result<f64> {
    nonempty(series)?;
    let sum: f64 = series.iter().sum();
    Ok(sum / series.len() as f64)
}

/// Population standard deviation of the gold-label probability.
pub fn variability(series: &[f64]) -> Result<f64> {
    let mean = confidence(series)?;
    Ok(spread(series.iter().copied(), mean, series.len()))
}

// Two-pass population standard deviation. A constant series gives exactly 0
// even when its rounded mean differs from the value.
fn spread(values: impl Iterator<Item = f64>, mean: f64, n: usize) -> f64 {
    let mut first = None;
    let mut constant = true;
    let mut ss = 0.0;
    for p in values {
        let f = *first.get_or_insert(p);
        constant &= p.to_bits() == f.to_bits();
        ss += (p - mean) * (p - mean);
    }
    if constant {
        0.0
    } else {
        (ss / n as f64).sqrt()
    }
}

/// Fraction of epochs whose argmax prediction equals the gold label.
pub fn correctness(preds: &[u32], gold: u32) -> Result<f64> {
    nonempty(preds)?;
    let hits = preds.iter().filter(|&&p| p == gold).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn metrics_for(guid: &str, gold: u32, series: &[EpochPoint]) -> Result<DynamicsMetrics> {
    nonempty(series)?;
    let n = series.len() as f64;
    let mut sum = 0.0;
    let mut hits = 0usize;
    for p in series {
        if !(0.0..=1.0).contains(&p.p_gold) {
            return Err(Error::InvalidRecord(format!(
                "p_gold {} outside [0, 1] for guid {guid:?} at epoch {}",
                p.p_gold, p.epoch
            )));
        }
        sum += p.p_gold;
        if p.pred == gold {
            hits += 1;
        }
    }
    let mean = sum / n;
    Ok(DynamicsMetrics {
        guid: guid.to_owned(),
        confidence: mean,
        variability: spread(series.iter().map(|p| p.p_gold), mean, series.len()),
        correctness: hits as f64 / n,
        epochs_used: series.len() as u32,
    })
}

/// Compute the three measures for every instance of `log`.
pub fn compute_all(log: &RunLog) -> Result<MetricsTable> {
    compute_all_with(log, Execution::default())
}

pub fn compute_all_with(log: &RunLog, exec: Execution) -> Result<MetricsTable> {
    if log.num_instances() > 0 && log.observed_epochs() == 0 {
        return Err(Error::Empty("log has no observed epochs".into()));
    }
    let indices: Vec<usize> = (0..log.num_instances()).collect();
    let rows = exec
        .map(&indices, |&i| {
            let inst = &log.instances()[i];
            metrics_for(&inst.guid, inst.gold, log.series(i))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable {
        meta: Some(log.meta.clone()),
        rows,
    })
}

/// Format `v` in positional notation with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding may carry into a new leading digit (0.9999999999 -> 1.00000000).
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 9 && decimals > 0 {
        let decimals = decimals - 1;
        format!("{v:.decimals$}")
    } else {
        s
    }
}

#[derive(Deserialize)]
struct CsvRow {
    guid: String,
    confidence: f64,
    variability: f64,
    correctness: f64,
    epochs_used: u32,
}

pub const CSV_HEADER: [&str; 5] = [
    "guid",
    "confidence",
    "variability",
    "correctness",
    "epochs_used",
];

impl MetricsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn run_id(&self) -> Option<&str> {
        self.meta.as_ref().map(|m| m.run_id.as_str())
    }

    pub fn get(&self, guid: &str) -> Option<&DynamicsMetrics> {
        self.rows
            .binary_search_by(|r| r.guid.as_str().cmp(guid))
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Write as CSV, values with 9 significant digits.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.guid.clone(),
                format_sig9(r.confidence),
                format_sig9(r.variability),
                format_sig9(r.correctness),
                r.epochs_used.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a table written by [`MetricsTable::write_csv`]. Rows are re-sorted
    /// by guid; duplicate guids are rejected.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Malformed {
                line: 1,
                message: format!("expected header {}", CSV_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row?;
            rows.push(DynamicsMetrics {
                guid: row.guid,
                confidence: row.confidence,
                variability: row.variability,
                correctness: row.correctness,
                epochs_used: row.epochs_used,
            });
        }
        rows.sort_by(|a, b| a.guid.cmp(&b.guid));
        if let Some(w) = rows.windows(2).find(|w| w[0].guid == w[1].guid) {
            return Err(Error::InvalidArgument(format!(
                "duplicate guid {:?} in metrics table",
                w[0].guid
            )));
        }
        Ok(MetricsTable { meta: None, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynlog::{ParseOptions, SnapshotRecord};

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&[0.7; 5]).unwrap(), 0.7);
        assert!((confidence(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(confidence(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(confidence(&[]).is_err());
    }

    #[test]
    fn variability_examples() {
        assert_eq!(variability(&[0.7; 5]).unwrap(), 0.0);
        let v = variability(&[0.2, 0.4, 0.6]).unwrap();
        assert!((v - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((v - 0.16329932).abs() < 1e-8);
        assert_eq!(variability(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(variability(&[]).is_err());
    }

    #[test]
    fn correctness_examples() {
        assert_eq!(correctness(&[1, 1, 1], 1).unwrap(), 1.0);
        assert_eq!(correctness(&[2, 2, 0, 2], 2).unwrap(), 0.75);
        assert_eq!(correctness(&[0, 0], 1).unwrap(), 0.0);
        assert!(correctness(&[], 0).is_err());
    }

    fn log_of(records: Vec<SnapshotRecord>, epochs: u32) -> RunLog {
        let meta = RunMeta::new("r", "d", 3, epochs).with_created_at("t");
        RunLog::from_records(meta, records, ParseOptions::default()).unwrap()
    }

    #[test]
    fn compute_all_composes() {
        let preds = [1, 0, 1];
        let records = [0.2, 0.4, 0.6]
            .iter()
            .zip(preds)
            .enumerate()
            .map(|(e, (&p, pred))| SnapshotRecord {
                epoch: e as u32,
                guid: "q".into(),
                gold: 1,
                p_gold: p,
                pred,
            })
            .collect();
        let table = compute_all(&log_of(records, 3)).unwrap();
        let row = &table.rows[0];
        assert!((row.confidence - 0.4).abs() < 1e-12);
        assert!((row.variability - 0.16329932).abs() < 1e-8);
        assert!((row.correctness - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.epochs_used, 3);
    }

    #[test]
    fn single_epoch_has_zero_variability() {
        let records = (0..5)
            .map(|i| SnapshotRecord {
                epoch: 0,
                guid: format!("g{i}"),
                gold: 0,
                p_gold: i as f64 / 5.0,
                pred: 0,
            })
            .collect();
        let table = compute_all(&log_of(records, 1)).unwrap();
        assert!(table.rows.iter().all(|r| r.variability == 0.0));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.4), "0.400000000");
        assert_eq!(format_sig9(0.16329931618554522), "0.163299316");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(0.99999999999), "1.00000000");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn csv_round_trip_to_nine_digits() {
        let table = MetricsTable {
            meta: None,
            rows: vec![
                DynamicsMetrics {
                    guid: "b,with comma".into(),
                    confidence: 0.123456789123,
                    variability: 0.01,
                    correctness: 1.0 / 3.0,
                    epochs_used: 3,
                },
                DynamicsMetrics {
                    guid: "a".into(),
                    confidence: 1.0,
                    variability: 0.0,
                    correctness: 0.0,
                    epochs_used: 3,
                },
            ],
        };
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.starts_with("guid,confidence,variability,correctness,epochs_used\n"));
        let back = MetricsTable::read_csv(out.as_slice()).unwrap();
        assert_eq!(back.rows[0].guid, "a");
        let b = back.get("b,with comma").unwrap();
        assert!((b.confidence - 0.123456789).abs() < 1e-15);
        assert!((b.correctness - 1.0 / 3.0).abs() < 1e-9);
    }
}
