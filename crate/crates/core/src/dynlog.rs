//! The `cartograph-dynlog v1` training-dynamics log.
//!
//! A log is line-delimited JSON (UTF-8, LF). The first line is a header
//! carrying [`RunMeta`]; every following line is one [`SnapshotRecord`]:
//!
//! ```text
//! {"cartograph_dynlog":1,"run_id":"r1","dataset_name":"toy","num_classes":4,"planned_epochs":20,"num_train_instances":2,"created_at":"2024-01-01T00:00:00Z"}
//! {"e":0,"guid":"q1","gold":2,"p_gold":0.25,"pred":2}
//! ```
//!
//! Epochs are 0-based: the snapshot taken with the model at the end of the
//! first training epoch is written with `"e":0`.
//!
//! `p_gold` is written in the shortest decimal form that parses back to the
//! identical `f64`, so a write/parse cycle is bit-exact. Unknown keys are
//! ignored on read.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of the `cartograph_dynlog` header key written by this version.
pub const FORMAT_VERSION: u32 = 1;

/// Run-level metadata, stored in the header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub dataset_name: String,
    pub num_classes: u32,
    pub planned_epochs: u32,
    /// Number of training instances, 0 when unknown.
    #[serde(default)]
    pub num_train_instances: u64,
    #[serde(default)]
    pub created_at: String,
}

impl RunMeta {
    /// Metadata stamped with the current UTC time.
    pub fn new(
        run_id: impl Into<String>,
        dataset_name: impl Into<String>,
        num_classes: u32,
        planned_epochs: u32,
    ) -> Self {
        RunMeta {
            run_id: run_id.into(),
            dataset_name: dataset_name.into(),
            num_classes,
            planned_epochs,
            num_train_instances: 0,
            created_at: utc_timestamp(),
        }
    }

    pub fn with_train_instances(mut self, n: u64) -> Self {
        self.num_train_instances = n;
        self
    }

    pub fn with_created_at(mut self, created_at: impl Into<String>) -> Self {
        self.created_at = created_at.into();
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.run_id.is_empty() {
            return Err(Error::InvalidMeta("run_id must be nonempty".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidMeta(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.planned_epochs < 1 {
            return Err(Error::InvalidMeta(
                "planned_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Current UTC time as an RFC 3339 string with second precision.
///
/// `SOURCE_DATE_EPOCH` (seconds since the Unix epoch) overrides the clock so
/// that artifact files can be reproduced byte for byte.
pub fn utc_timestamp() -> String {
    use chrono::{DateTime, SecondsFormat, Utc};
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// The gold-label probability and argmax prediction of one instance at the
/// end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub epoch: u32,
    pub guid: String,
    pub gold: u32,
    pub p_gold: f64,
    pub pred: u32,
}

impl SnapshotRecord {
    pub fn check(&self, meta: &RunMeta) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_gold) {
            return Err(Error::InvalidRecord(format!(
                "p_gold {} outside [0, 1] for guid {:?}",
                self.p_gold, self.guid
            )));
        }
        if self.gold >= meta.num_classes {
            return Err(Error::InvalidRecord(format!(
                "gold {} out of range for {} classes (guid {:?})",
                self.gold, meta.num_classes, self.guid
            )));
        }
        if self.pred >= meta.num_classes {
            return Err(Error::InvalidRecord(format!(
                "pred {} out of range for {} classes (guid {:?})",
                self.pred, meta.num_classes, self.guid
            )));
        }
        if self.epoch >= meta.planned_epochs {
            return Err(Error::InvalidRecord(format!(
                "epoch {} beyond planned {} epochs (guid {:?})",
                self.epoch, meta.planned_epochs, self.guid
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    cartograph_dynlog: u32,
    #[serde(flatten)]
    meta: RunMeta,
}

#[derive(Serialize, Deserialize)]
struct RecordLine<'a> {
    e: u32,
    #[serde(borrow)]
    guid: Cow<'a, str>,
    gold: u32,
    p_gold: f64,
    pred: u32,
}

/// Write the header line for `meta`. Invalid metadata is rejected before
/// anything reaches the sink.
pub fn write_header<W: Write>(meta: &RunMeta, sink: &mut W) -> Result<()> {
    meta.check()?;
    let header = HeaderLine {
        cartograph_dynlog: FORMAT_VERSION,
        meta: meta.clone(),
    };
    serde_json::to_writer(&mut *sink, &header)?;
    sink.write_all(b"\n")?;
    Ok(())
}

fn write_record<W: Write>(record: &SnapshotRecord, sink: &mut W) -> Result<()> {
    let line = RecordLine {
        e: record.epoch,
        guid: Cow::Borrowed(&record.guid),
        gold: record.gold,
        p_gold: record.p_gold,
        pred: record.pred,
    };
    serde_json::to_writer(&mut *sink, &line)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Append-only writer for one run. The header is written on construction.
///
/// Records become visible to readers of the underlying file after
/// [`LogWriter::flush`].
pub struct LogWriter<W: Write> {
    sink: W,
    meta: RunMeta,
    records: u64,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut sink: W, meta: RunMeta) -> Result<Self> {
        write_header(&meta, &mut sink)?;
        Ok(LogWriter {
            sink,
            meta,
            records: 0,
        })
    }

    pub fn meta(&self) -> &RunMeta {
        &self.meta
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn append_snapshot(&mut self, record: &SnapshotRecord) -> Result<()> {
        record.check(&self.meta)?;
        write_record(record, &mut self.sink)?;
        self.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.sink.flush()?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

/// One epoch of one instance inside a parsed [`RunLog`].
///
/// `gold` is kept per point so that validation can detect labels that drift
/// between epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPoint {
    pub epoch: u32,
    pub gold: u32,
    pub p_gold: f64,
    pub pred: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogInstance {
    pub guid: String,
    /// Gold label at the instance's earliest observed epoch.
    pub gold: u32,
}

/// A parsed log: instances sorted by guid, each with its epoch-ascending
/// series of snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    instances: Vec<LogInstance>,
    series: Vec<Vec<EpochPoint>>,
    observed_epochs: u32,
    ragged: bool,
}

impl RunLog {
    /// Build a log from in-memory records, applying the same checks as
    /// [`parse_log`] (duplicates, density unless `allow_ragged`).
    pub fn from_records<I>(meta: RunMeta, records: I, options: ParseOptions) -> Result<Self>
    where
        I: IntoIterator<Item = SnapshotRecord>,
    {
        meta.check()?;
        let mut builder = Builder::default();
        for (i, r) in records.into_iter().enumerate() {
            builder.push(i + 1, &r.guid, r.epoch, r.gold, r.p_gold, r.pred)?;
        }
        builder.finish(meta, options)
    }

    pub fn instances(&self) -> &[LogInstance] {
        &self.instances
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    /// Number of epochs seen in the log (max epoch + 1), possibly below the
    /// planned count when a run stopped early.
    pub fn observed_epochs(&self) -> u32 {
        self.observed_epochs
    }

    /// True when at least one instance lacks a record for some observed epoch.
    pub fn is_ragged(&self) -> bool {
        self.ragged
    }

    pub fn series(&self, index: usize) -> &[EpochPoint] {
        &self.series[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LogInstance, &[EpochPoint])> {
        self.instances
            .iter()
            .zip(self.series.iter().map(Vec::as_slice))
    }

    pub fn num_records(&self) -> usize {
        self.series.iter().map(Vec::len).sum()
    }

    /// Serialize the whole log, epoch-major with instances in guid order.
    pub fn write<W: Write>(&self, sink: &mut W) -> Result<()> {
        write_header(&self.meta, sink)?;
        let mut cursor = vec![0usize; self.series.len()];
        for epoch in 0..self.observed_epochs {
            for (i, inst) in self.instances.iter().enumerate() {
                let series = &self.series[i];
                if let Some(p) = series.get(cursor[i]).filter(|p| p.epoch == epoch) {
                    cursor[i] += 1;
                    write_record(
                        &SnapshotRecord {
                            epoch,
                            guid: inst.guid.clone(),
                            gold: p.gold,
                            p_gold: p.p_gold,
                            pred: p.pred,
                        },
                        sink,
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept instances missing from some epochs; each instance is then
    /// restricted to its observed epochs.
    pub allow_ragged: bool,
}

#[derive(Default)]
struct Builder {
    index: HashMap<String, usize>,
    guids: Vec<String>,
    series: Vec<Vec<EpochPoint>>,
    max_epoch: Option<u32>,
}

impl Builder {
    fn push(
        &mut self,
        line: usize,
        guid: &str,
        epoch: u32,
        gold: u32,
        p_gold: f64,
        pred: u32,
    ) -> Result<()> {
        let idx = match self.index.get(guid) {
            Some(&i) => i,
            None => {
                let i = self.guids.len();
                self.index.insert(guid.to_owned(), i);
                self.guids.push(guid.to_owned());
                self.series.push(Vec::new());
                i
            }
        };
        let series = &mut self.series[idx];
        let in_order = series.last().is_none_or(|p| p.epoch < epoch);
        if !in_order && series.iter().any(|p| p.epoch == epoch) {
            return Err(Error::DuplicateRecord {
                line,
                epoch,
                guid: guid.to_owned(),
            });
        }
        series.push(EpochPoint {
            epoch,
            gold,
            p_gold,
            pred,
        });
        self.max_epoch = Some(self.max_epoch.map_or(epoch, |m| m.max(epoch)));
        Ok(())
    }

    fn finish(self, meta: RunMeta, options: ParseOptions) -> Result<RunLog> {
        let observed_epochs = self.max_epoch.map_or(0, |m| m + 1);
        let mut order: Vec<usize> = (0..self.guids.len()).collect();
        order.sort_unstable_by(|&a, &b| self.guids[a].cmp(&self.guids[b]));

        let mut guids: Vec<Option<String>> = self.guids.into_iter().map(Some).collect();
        let mut all_series: Vec<Option<Vec<EpochPoint>>> =
            self.series.into_iter().map(Some).collect();
        let mut instances = Vec::with_capacity(order.len());
        let mut series_out = Vec::with_capacity(order.len());
        let mut ragged = false;

        for i in order {
            let guid = guids[i].take().expect("each index visited once");
            let mut series = all_series[i].take().expect("each index visited once");
            series.sort_unstable_by_key(|p| p.epoch);
            if series.len() != observed_epochs as usize {
                ragged = true;
                if !options.allow_ragged {
                    let missing = series
                        .iter()
                        .enumerate()
                        .find(|(k, p)| p.epoch != *k as u32)
                        .map_or(series.len() as u32, |(k, _)| k as u32);
                    return Err(Error::RaggedGrid {
                        guid,
                        epoch: missing,
                    });
                }
            }
            instances.push(LogInstance {
                gold: series[0].gold,
                guid,
            });
            series_out.push(series);
        }

        Ok(RunLog {
            meta,
            instances,
            series: series_out,
            observed_epochs,
            ragged,
        })
    }
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

/// Parse a `cartograph-dynlog v1` stream into a [`RunLog`].
///
/// Structural problems are errors: missing or repeated header, unparsable
/// lines (reported with their 1-based line number), duplicate
/// `(epoch, guid)` pairs, and ragged grids unless
/// [`ParseOptions::allow_ragged`] is set. Value bounds and gold drift are
/// left to [`validate`].
pub fn parse_log<R: BufRead>(mut source: R, options: ParseOptions) -> Result<RunLog> {
    let mut buf = String::new();
    let mut line_no = 0usize;
    let mut meta: Option<RunMeta> = None;
    let mut builder = Builder::default();

    loop {
        buf.clear();
        if source.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        if meta.is_none() {
            let header: HeaderLine = match serde_json::from_str(line) {
                Ok(h) => h,
                Err(_) if serde_json::from_str::<RecordLine>(line).is_ok() => {
                    return Err(Error::MissingHeader)
                }
                Err(e) => return Err(malformed(line_no, format!("bad header: {e}"))),
            };
            if header.cartograph_dynlog != FORMAT_VERSION {
                return Err(malformed(
                    line_no,
                    format!("unsupported format version {}", header.cartograph_dynlog),
                ));
            }
            header.meta.check()?;
            meta = Some(header.meta);
            continue;
        }
        match serde_json::from_str::<RecordLine>(line) {
            Ok(r) => builder.push(line_no, &r.guid, r.e, r.gold, r.p_gold, r.pred)?,
            Err(e) => {
                if serde_json::from_str::<HeaderLine>(line).is_ok() {
                    return Err(Error::DuplicateHeader { line: line_no });
                }
                return Err(malformed(line_no, e.to_string()));
            }
        }
    }

    let meta = meta.ok_or(Error::MissingHeader)?;
    builder.finish(meta, options)
}

/// Category of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Line could not be parsed (streaming mode only).
    Format,
    /// Header missing or repeated (streaming mode only).
    Header,
    /// Instance missing from an observed epoch.
    Density,
    /// `p_gold` outside [0, 1] or not a number.
    ProbabilityBounds,
    /// `gold` or `pred` not below `num_classes`.
    ClassBounds,
    /// Epoch at or beyond `planned_epochs`.
    EpochBounds,
    /// Gold label changes between epochs for one guid.
    GoldDrift,
    /// Instance count disagrees with `num_train_instances`.
    InstanceCount,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::Format => "format",
            ViolationKind::Header => "header",
            ViolationKind::Density => "density",
            ViolationKind::ProbabilityBounds => "probability bounds",
            ViolationKind::ClassBounds => "class bounds",
            ViolationKind::EpochBounds => "epoch bounds",
            ViolationKind::GoldDrift => "gold drift",
            ViolationKind::InstanceCount => "instance count",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub count: u64,
    pub first_guid: Option<String>,
    pub detail: String,
}

/// Result of [`validate`] or [`validate_stream`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn get(&self, kind: ViolationKind) -> Option<&Violation> {
        self.violations.iter().find(|v| v.kind == kind)
    }

    fn note(&mut self, kind: ViolationKind, guid: Option<&str>, detail: impl FnOnce() -> String) {
        match self.violations.iter_mut().find(|v| v.kind == kind) {
            Some(v) => v.count += 1,
            None => self.violations.push(Violation {
                kind,
                count: 1,
                first_guid: guid.map(str::to_owned),
                detail: detail(),
            }),
        }
    }

    fn finish(mut self) -> Self {
        self.violations.sort_by_key(|v| v.kind);
        self
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return writeln!(f, "valid");
        }
        for v in &self.violations {
            write!(f, "{}: {} occurrence(s)", v.kind, v.count)?;
            if let Some(g) = &v.first_guid {
                write!(f, ", first guid {g:?}")?;
            }
            writeln!(f, " ({})", v.detail)?;
        }
        Ok(())
    }
}

fn check_point(
    report: &mut ValidationReport,
    meta: &RunMeta,
    guid: &str,
    epoch: u32,
    gold: u32,
    p_gold: f64,
    pred: u32,
) {
    if !(0.0..=1.0).contains(&p_gold) {
        report.note(ViolationKind::ProbabilityBounds, Some(guid), || {
            format!("p_gold {p_gold} at epoch {epoch}")
        });
    }
    if gold >= meta.num_classes || pred >= meta.num_classes {
        report.note(ViolationKind::ClassBounds, Some(guid), || {
            format!(
                "gold {gold} / pred {pred} with {} classes at epoch {epoch}",
                meta.num_classes
            )
        });
    }
    if epoch >= meta.planned_epochs {
        report.note(ViolationKind::EpochBounds, Some(guid), || {
            format!("epoch {epoch} with {} planned", meta.planned_epochs)
        });
    }
}

/// Check a parsed log for density, bounds, gold drift and instance count.
/// Never fails and never modifies the log.
pub fn validate(log: &RunLog) -> ValidationReport {
    let mut report = ValidationReport::default();
    let meta = &log.meta;
    let e_obs = log.observed_epochs;
    for (inst, series) in log.iter() {
        if series.len() != e_obs as usize {
            report.note(ViolationKind::Density, Some(&inst.guid), || {
                format!("{} of {e_obs} epochs present", series.len())
            });
        }
        let mut drifted = false;
        for p in series {
            check_point(
                &mut report,
                meta,
                &inst.guid,
                p.epoch,
                p.gold,
                p.p_gold,
                p.pred,
            );
            if p.gold != inst.gold && !drifted {
                drifted = true;
                report.note(ViolationKind::GoldDrift, Some(&inst.guid), || {
                    format!("gold {} then {} at epoch {}", inst.gold, p.gold, p.epoch)
                });
            }
        }
    }
    let n = log.instances.len() as u64;
    if meta.num_train_instances != 0 && n != 0 && n != meta.num_train_instances {
        report.note(ViolationKind::InstanceCount, None, || {
            format!("header declares {}, log has {n}", meta.num_train_instances)
        });
    }
    report.finish()
}

/// Line-by-line format and bounds check in memory proportional to the
/// number of epochs.
///
/// Density is checked through per-epoch record counts, which every dense
/// grid has equal. Duplicates and gold drift need the whole grid and are
/// only checked by [`validate`] on a parsed log.
pub fn validate_stream<R: BufRead>(mut source: R) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut buf = String::new();
    let mut line_no = 0usize;
    let mut meta: Option<RunMeta> = None;
    let mut per_epoch: BTreeMap<u32, u64> = BTreeMap::new();
    loop {
        buf.clear();
        match source.read_line(&mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                report.note(ViolationKind::Format, None, || {
                    format!("read error after line {line_no}: {e}")
                });
                break;
            }
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match &meta {
            None => match serde_json::from_str::<HeaderLine>(line) {
                Ok(h) => {
                    if let Err(e) = h.meta.check() {
                        report.note(ViolationKind::Header, None, || e.to_string());
                    }
                    meta = Some(h.meta);
                }
                Err(e) => {
                    report.note(ViolationKind::Header, None, || {
                        format!("line {line_no}: no header ({e})")
                    });
                    return report.finish();
                }
            },
            Some(m) => match serde_json::from_str::<RecordLine>(line) {
                Ok(r) => {
                    check_point(&mut report, m, &r.guid, r.e, r.gold, r.p_gold, r.pred);
                    *per_epoch.entry(r.e).or_default() += 1;
                }
                Err(e) => {
                    if serde_json::from_str::<HeaderLine>(line).is_ok() {
                        report.note(ViolationKind::Header, None, || {
                            format!("line {line_no}: duplicate header")
                        });
                    } else {
                        report.note(ViolationKind::Format, None, || {
                            format!("line {line_no}: {e}")
                        });
                    }
                }
            },
        }
    }
    let Some(meta) = meta else {
        report.note(ViolationKind::Header, None, || "empty log".into());
        return report.finish();
    };
    if let Some(&widest) = per_epoch.values().max() {
        let last = *per_epoch.keys().next_back().expect("non-empty");
        if per_epoch.len() as u64 != u64::from(last) + 1 {
            report.note(ViolationKind::Density, None, || {
                format!("only {} of epochs 0..={last} have records", per_epoch.len())
            });
        }
        for (&e, &n) in &per_epoch {
            if n != widest {
                report.note(ViolationKind::Density, None, || {
                    format!("epoch {e} has {n} records, another epoch has {widest}")
                });
            }
        }
        if meta.num_train_instances != 0 && widest != meta.num_train_instances {
            report.note(ViolationKind::InstanceCount, None, || {
                format!(
                    "header declares {}, an epoch has {widest} records",
                    meta.num_train_instances
                )
            });
        }
    }
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(c: u32, e: u32) -> RunMeta {
        RunMeta::new("run", "toy", c, e).with_created_at("2024-01-01T00:00:00Z")
    }

    fn rec(epoch: u32, guid: &str, gold: u32, p_gold: f64, pred: u32) -> SnapshotRecord {
        SnapshotRecord {
            epoch,
            guid: guid.into(),
            gold,
            p_gold,
            pred,
        }
    }

    fn grid(guids: &[&str], epochs: u32) -> Vec<u8> {
        let mut w = LogWriter::new(Vec::new(), meta(3, 5)).unwrap();
        for e in 0..epochs {
            for (i, g) in guids.iter().enumerate() {
                w.append_snapshot(&rec(e, g, 1, 0.1 * (i + 1) as f64, 1))
                    .unwrap();
            }
        }
        w.into_inner().unwrap()
    }

    #[test]
    fn header_echoes_fields() {
        let mut out = Vec::new();
        write_header(&meta(4, 20).with_train_instances(182_822), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("{\"cartograph_dynlog\":1,\"run_id\":\"run\""));
        assert!(text.contains("\"num_classes\":4"));
        assert!(text.contains("\"planned_epochs\":20"));
        assert!(text.contains("\"num_train_instances\":182822"));
        assert_eq!(text.matches('\n').count(), 1);
    }

    #[test]
    fn invalid_meta_writes_nothing() {
        let mut out = Vec::new();
        assert!(write_header(&meta(1, 20), &mut out).is_err());
        assert!(out.is_empty());
        assert!(write_header(&meta(2, 0), &mut out).is_err());
        let mut m = meta(2, 2);
        m.run_id.clear();
        assert!(write_header(&m, &mut out).is_err());
        assert!(out.is_empty());
    }

    #[test]
    fn append_appends_one_line() {
        let mut w = LogWriter::new(Vec::new(), meta(4, 20)).unwrap();
        w.append_snapshot(&rec(0, "q1", 2, 0.25, 2)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            r#"{"e":0,"guid":"q1","gold":2,"p_gold":0.25,"pred":2}"#
        );
    }

    #[test]
    fn append_rejects_out_of_range() {
        let mut w = LogWriter::new(Vec::new(), meta(4, 20)).unwrap();
        assert!(w.append_snapshot(&rec(0, "q1", 2, 1.0001, 2)).is_err());
        assert!(w.append_snapshot(&rec(0, "q1", 2, -0.1, 2)).is_err());
        assert!(w.append_snapshot(&rec(0, "q1", 2, f64::NAN, 2)).is_err());
        assert!(w.append_snapshot(&rec(0, "q1", 4, 0.5, 2)).is_err());
        assert!(w.append_snapshot(&rec(0, "q1", 2, 0.5, 7)).is_err());
        assert!(w.append_snapshot(&rec(20, "q1", 2, 0.5, 2)).is_err());
        assert_eq!(w.records_written(), 0);
    }

    #[test]
    fn header_only_is_empty_log() {
        let mut out = Vec::new();
        write_header(&meta(4, 20), &mut out).unwrap();
        let log = parse_log(out.as_slice(), ParseOptions::default()).unwrap();
        assert_eq!(log.num_instances(), 0);
        assert_eq!(log.observed_epochs(), 0);
        assert!(validate(&log).is_valid());
    }

    #[test]
    fn missing_and_duplicate_header() {
        let body = b"{\"e\":0,\"guid\":\"q1\",\"gold\":0,\"p_gold\":0.5,\"pred\":0}\n";
        assert!(matches!(
            parse_log(&body[..], ParseOptions::default()),
            Err(Error::MissingHeader)
        ));
        assert!(matches!(
            parse_log(&b""[..], ParseOptions::default()),
            Err(Error::MissingHeader)
        ));
        let mut out = Vec::new();
        write_header(&meta(4, 20), &mut out).unwrap();
        write_header(&meta(4, 20), &mut out).unwrap();
        assert!(matches!(
            parse_log(out.as_slice(), ParseOptions::default()),
            Err(Error::DuplicateHeader { line: 2 })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut out = grid(&["a", "b"], 1);
        out.extend_from_slice(b"{\"e\":0,\"guid\":\"c\"\n");
        match parse_log(out.as_slice(), ParseOptions::default()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_record_is_error() {
        let mut out = grid(&["a", "b"], 2);
        out.extend_from_slice(b"{\"e\":0,\"guid\":\"b\",\"gold\":1,\"p_gold\":0.3,\"pred\":1}\n");
        match parse_log(out.as_slice(), ParseOptions::default()) {
            Err(Error::DuplicateRecord { line, epoch, guid }) => {
                assert_eq!((line, epoch, guid.as_str()), (6, 0, "b"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_grid_names_instance_and_epoch() {
        let mut w = LogWriter::new(Vec::new(), meta(3, 5)).unwrap();
        for e in 0..3 {
            for g in ["q1", "q2", "q3"] {
                if !(g == "q2" && e == 1) {
                    w.append_snapshot(&rec(e, g, 0, 0.5, 0)).unwrap();
                }
            }
        }
        let bytes = w.into_inner().unwrap();
        match parse_log(bytes.as_slice(), ParseOptions::default()) {
            Err(Error::RaggedGrid { guid, epoch }) => {
                assert_eq!(guid, "q2");
                assert_eq!(epoch, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let log = parse_log(bytes.as_slice(), ParseOptions { allow_ragged: true }).unwrap();
        assert!(log.is_ragged());
        assert_eq!(log.series(1).len(), 2);
        let report = validate(&log);
        let density = report.get(ViolationKind::Density).unwrap();
        assert_eq!(density.first_guid.as_deref(), Some("q2"));
    }

    #[test]
    fn valid_grid_validates_clean() {
        let log = parse_log(
            grid(&["a", "b", "c"], 3).as_slice(),
            ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(log.observed_epochs(), 3);
        let report = validate(&log);
        assert!(report.is_valid(), "{report}");
        assert_eq!(validate(&log), report);
    }

    #[test]
    fn gold_drift_reported() {
        let records = vec![
            rec(0, "q1", 0, 0.4, 0),
            rec(1, "q1", 1, 0.4, 0),
            rec(0, "q2", 2, 0.4, 2),
            rec(1, "q2", 2, 0.4, 2),
        ];
        let log = RunLog::from_records(meta(3, 5), records, ParseOptions::default()).unwrap();
        let report = validate(&log);
        let drift = report.get(ViolationKind::GoldDrift).unwrap();
        assert_eq!(drift.count, 1);
        assert_eq!(drift.first_guid.as_deref(), Some("q1"));
    }

    #[test]
    fn bounds_reported_not_thrown() {
        let text = concat!(
            r#"{"cartograph_dynlog":1,"run_id":"r","dataset_name":"d","num_classes":2,"planned_epochs":2,"num_train_instances":5,"created_at":""}"#,
            "\n",
            r#"{"e":0,"guid":"a","gold":0,"p_gold":1.5,"pred":0}"#,
            "\n",
            r#"{"e":0,"guid":"b","gold":3,"p_gold":0.5,"pred":0}"#,
            "\n",
            r#"{"e":2,"guid":"c","gold":0,"p_gold":0.5,"pred":0}"#,
            "\n",
        );
        let log = parse_log(text.as_bytes(), ParseOptions { allow_ragged: true }).unwrap();
        let report = validate(&log);
        for kind in [
            ViolationKind::ProbabilityBounds,
            ViolationKind::ClassBounds,
            ViolationKind::EpochBounds,
            ViolationKind::InstanceCount,
            ViolationKind::Density,
        ] {
            assert!(report.get(kind).is_some(), "missing {kind}");
        }
        let streamed = validate_stream(text.as_bytes());
        assert!(streamed.get(ViolationKind::ProbabilityBounds).is_some());
        assert!(streamed.get(ViolationKind::ClassBounds).is_some());
        assert!(streamed.get(ViolationKind::EpochBounds).is_some());
        assert!(streamed.get(ViolationKind::Density).is_some());
        assert!(streamed.get(ViolationKind::InstanceCount).is_some());
    }

    #[test]
    fn foreign_writer_formatting_accepted() {
        // Spaced separators, reordered keys and extra keys, as produced by
        // `json.dumps` in an external training loop.
        let text = concat!(
            r#"{"cartograph_dynlog": 1, "run_id": "ext", "dataset_name": "d", "num_classes": 4, "planned_epochs": 2, "num_train_instances": 1, "created_at": "x", "extra": true}"#,
            "\n",
            r#"{"guid": "qé", "e": 0, "pred": 1, "p_gold": 0.30000000000000004, "gold": 1, "loss": 2.1}"#,
            "\r\n",
            r#"{"guid": "qé", "e": 1, "pred": 1, "p_gold": 1e-3, "gold": 1}"#,
            "\n",
        );
        let log = parse_log(text.as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(log.instances()[0].guid, "qé");
        assert_eq!(log.series(0)[0].p_gold, 0.1 + 0.2);
        assert_eq!(log.series(0)[1].p_gold, 0.001);
        assert!(validate_stream(text.as_bytes()).is_valid());
    }

    #[test]
    fn streaming_flags_missing_header() {
        let report = validate_stream(&b"{\"e\":0}\n"[..]);
        assert!(report.get(ViolationKind::Header).is_some());
        let report = validate_stream(&b""[..]);
        assert!(report.get(ViolationKind::Header).is_some());
    }

    #[test]
    fn source_date_epoch_pins_timestamp() {
        // Only the formatting path is exercised; the env var itself is
        // process-global and left untouched here.
        let ts = utc_timestamp();
        assert!(ts.ends_with('Z'));
        assert_eq!(ts.len(), "2024-01-01T00:00:00Z".len());
    }
}
