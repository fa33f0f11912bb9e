//! Data-map regions, subset selection and the mislabel-candidate queue.
//!
//! Regions are rank-based: the caller chooses what fraction of the data each
//! region receives and instances are taken in rank order until the quota is
//! met. There are no absolute confidence or variability thresholds.
//!
//! Orderings (all ties end on ascending guid):
//!
//! | region      | primary key             | tie-break                |
//! |-------------|-------------------------|--------------------------|
//! | ambiguous   | variability, descending | confidence, descending   |
//! | easy        | confidence, descending  | variability, ascending   |
//! | hard        | confidence, ascending   | variability, ascending   |
//!
//! Quotas use [`count`]: `max(1, floor(f * n + 0.5))`.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsMetrics, MetricsTable};
use crate::error::{Error, Result};
use crate::rng::{sample_indices, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    EasyToLearn,
    HardToLearn,
    Ambiguous,
    Other,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::EasyToLearn,
        Region::HardToLearn,
        Region::Ambiguous,
        Region::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::EasyToLearn => "easy_to_learn",
            Region::HardToLearn => "hard_to_learn",
            Region::Ambiguous => "ambiguous",
            Region::Other => "other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Quota size for fraction `f` of `n` instances: round half up, at least 1,
/// at most `n`.
pub fn count(fraction: f64, n: usize) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.max(1).min(n)
}

fn quota(fraction: f64, n: usize) -> usize {
    if fraction == 0.0 {
        0
    } else {
        count(fraction, n)
    }
}

fn by_ambiguity(a: &DynamicsMetrics, b: &DynamicsMetrics) -> Ordering {
    b.variability
        .total_cmp(&a.variability)
        .then(b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.guid.cmp(&b.guid))
}

fn by_ease(a: &DynamicsMetrics, b: &DynamicsMetrics) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.variability.total_cmp(&b.variability))
        .then_with(|| a.guid.cmp(&b.guid))
}

fn by_hardness(a: &DynamicsMetrics, b: &DynamicsMetrics) -> Ordering {
    a.confidence
        .total_cmp(&b.confidence)
        .then(a.variability.total_cmp(&b.variability))
        .then_with(|| a.guid.cmp(&b.guid))
}

type Comparator = fn(&DynamicsMetrics, &DynamicsMetrics) -> Ordering;

fn ranked_indices(
    rows: &[DynamicsMetrics],
    candidates: impl IntoIterator<Item = usize>,
    order: Comparator,
) -> Vec<usize> {
    let mut v: Vec<usize> = candidates.into_iter().collect();
    v.sort_by(|&a, &b| order(&rows[a], &rows[b]));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFractions {
    pub easy: f64,
    pub hard: f64,
    pub ambiguous: f64,
}

impl Default for RegionFractions {
    fn default() -> Self {
        RegionFractions {
            easy: 0.33,
            hard: 0.33,
            ambiguous: 0.33,
        }
    }
}

/// Region of every instance, sorted by guid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAssignment {
    pub fractions: RegionFractions,
    entries: Vec<(String, Region)>,
}

impl RegionAssignment {
    pub fn get(&self, guid: &str) -> Option<Region> {
        self.entries
            .binary_search_by(|(g, _)| g.as_str().cmp(guid))
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Region)> {
        self.entries.iter().map(|(g, r)| (g.as_str(), *r))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_of(&self, region: Region) -> usize {
        self.entries.iter().filter(|(_, r)| *r == region).count()
    }

    pub fn guids_in(&self, region: Region) -> Vec<&str> {
        self.iter()
            .filter(|(_, r)| *r == region)
            .map(|(g, _)| g)
            .collect()
    }

    /// CSV with header `guid,region`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["guid", "region"])?;
        for (g, r) in self.iter() {
            w.write_record([g, r.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assign each instance to a region.
///
/// Ambiguous is filled first, then easy from the remainder, then hard from
/// what is left, so regions never overlap. A zero fraction yields an empty
/// region; quotas that rounding pushes past the remaining instances are
/// truncated.
pub fn classify(
    metrics: &MetricsTable,
    f_easy: f64,
    f_hard: f64,
    f_ambiguous: f64,
) -> Result<RegionAssignment> {
    let n = metrics.len();
    if n == 0 {
        return Err(Error::Empty("metrics table".into()));
    }
    for (name, f) in [
        ("easy", f_easy),
        ("hard", f_hard),
        ("ambiguous", f_ambiguous),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "{name} fraction {f} outside [0, 1]"
            )));
        }
    }
    if f_easy + f_hard + f_ambiguous > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "region fractions sum to {}, above 1",
            f_easy + f_hard + f_ambiguous
        )));
    }

    let rows = &metrics.rows;
    let mut region = vec![Region::Other; n];
    for i in ranked_indices(rows, 0..n, by_ambiguity)
        .into_iter()
        .take(quota(f_ambiguous, n))
    {
        region[i] = Region::Ambiguous;
    }
    for (target, fraction, order) in [
        (Region::EasyToLearn, f_easy, by_ease as Comparator),
        (Region::HardToLearn, f_hard, by_hardness),
    ] {
        let free: Vec<usize> = (0..n).filter(|&i| region[i] == Region::Other).collect();
        for i in ranked_indices(rows, free, order)
            .into_iter()
            .take(quota(fraction, n))
        {
            region[i] = target;
        }
    }

    Ok(RegionAssignment {
        fractions: RegionFractions {
            easy: f_easy,
            hard: f_hard,
            ambiguous: f_ambiguous,
        },
        entries: metrics
            .rows
            .iter()
            .zip(region)
            .map(|(r, reg)| (r.guid.clone(), reg))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Ambiguous,
    Easy,
    Hard,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Ambiguous => "ambiguous",
            Strategy::Easy => "easy",
            Strategy::Hard => "hard",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "ambiguous" => Ok(Strategy::Ambiguous),
            "easy" => Ok(Strategy::Easy),
            "hard" => Ok(Strategy::Hard),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub fraction: f64,
    pub seed: u64,
}

impl SelectionSpec {
    pub fn new(strategy: Strategy, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} outside (0, 1]"
            )));
        }
        Ok(SelectionSpec {
            strategy,
            fraction,
            seed,
        })
    }
}

/// Pick `count(fraction, n)` instances by strategy; returned guid-sorted.
///
/// `random` draws a uniform sample without replacement over the guid-sorted
/// rows using the ChaCha20 selection stream seeded by `spec.seed`.
pub fn select(metrics: &MetricsTable, spec: &SelectionSpec) -> Result<Vec<String>> {
    SelectionSpec::new(spec.strategy, spec.fraction, spec.seed)?;
    let n = metrics.len();
    if n == 0 {
        return Err(Error::Empty("metrics table".into()));
    }
    let k = count(spec.fraction, n);
    let mut out: Vec<String> = match spec.strategy {
        Strategy::Random => sample_indices(spec.seed, Stream::Selection, n, k)
            .into_iter()
            .map(|i| metrics.rows[i].guid.clone())
            .collect(),
        strategy => {
            let order: Comparator = match strategy {
                Strategy::Ambiguous => by_ambiguity,
                Strategy::Easy => by_ease,
                _ => by_hardness,
            };
            ranked_indices(&metrics.rows, 0..n, order)
                .into_iter()
                .take(k)
                .map(|i| metrics.rows[i].guid.clone())
                .collect()
        }
    };
    out.sort();
    Ok(out)
}

/// The `k` lowest-confidence instances, lowest first. This is the queue to
/// hand to a reviewer when hunting for mislabelled data.
pub fn rank_hard_to_learn(metrics: &MetricsTable, k: usize) -> Result<Vec<String>> {
    let n = metrics.len();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside [1, {n}]")));
    }
    Ok(ranked_indices(&metrics.rows, 0..n, by_hardness)
        .into_iter()
        .take(k)
        .map(|i| metrics.rows[i].guid.clone())
        .collect())
}

/// Provenance sidecar written next to a selection's guid list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub strategy: Strategy,
    pub fraction: f64,
    pub seed: u64,
    pub count: usize,
    pub source_run_id: Option<String>,
    pub tool_version: String,
}

impl SelectionManifest {
    pub fn new(spec: &SelectionSpec, count: usize, source_run_id: Option<String>) -> Self {
        SelectionManifest {
            strategy: spec.strategy,
            fraction: spec.fraction,
            seed: spec.seed,
            count,
            source_run_id,
            tool_version: crate::TOOL_VERSION.to_owned(),
        }
    }

    /// `sel.txt` -> `sel.txt.manifest.json`.
    pub fn sidecar_path(list_path: &Path) -> PathBuf {
        let mut s = list_path.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn write_guid_list<W: Write>(guids: &[String], mut sink: W) -> Result<()> {
    for g in guids {
        writeln!(sink, "{g}")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_guid_list<R: BufRead>(source: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in source.lines() {
        let line = line?;
        let g = line.trim_end_matches('\r');
        if !g.is_empty() {
            out.push(g.to_owned());
        }
    }
    Ok(out)
}

/// Write `guids` to `path` and the manifest to its sidecar path.
pub fn write_selection(path: &Path, guids: &[String], manifest: &SelectionManifest) -> Result<()> {
    write_guid_list(guids, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    let sidecar = std::fs::File::create(SelectionManifest::sidecar_path(path))?;
    serde_json::to_writer_pretty(sidecar, manifest)?;
    Ok(())
}
