//! Instances, splits and the hashed bag-of-words featurizer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Ood,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Ood => "ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "ood" => Ok(Split::Ood),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Sparse real vector with strictly increasing indices below `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Build from unordered `(index, value)` pairs; repeated indices are
    /// summed and exact zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut entries: Vec<(u32, f64)> = pairs.into_iter().collect();
        if let Some(&(i, _)) = entries.iter().find(|(i, _)| *i as usize >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: i as usize + 1,
            });
        }
        if let Some(&(i, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value {v} at index {i}"
            )));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Ok(SparseVector {
            dim,
            entries: merged,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// 64-bit FNV-1a over the token's UTF-8 bytes.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased tokens split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag-of-words: token counts in `dim` FNV-1a buckets, scaled to unit
/// L2 norm. Empty text gives the zero vector.
pub fn featurize(text: &str, dim: usize) -> Result<SparseVector> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature dimension must be at least 2, got {dim}"
        )));
    }
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for tok in tokenize(text) {
        let bucket = (fnv1a(tok.as_bytes()) % dim as u64) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    }
    let mut v = SparseVector::from_pairs(dim, counts)?;
    let norm = v.norm();
    if norm > 0.0 {
        for e in &mut v.entries {
            e.1 /= norm;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub guid: String,
    pub split: Split,
    pub gold: u32,
    pub features: SparseVector,
}

#[derive(Deserialize)]
struct ExampleLine {
    guid: String,
    split: Split,
    gold: u32,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    features: Option<Vec<(u32, f64)>>,
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    guid: &'a str,
    split: Split,
    gold: u32,
    features: &'a [(u32, f64)],
}

/// Featurized multiclass instances across splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    examples: Vec<Example>,
    num_classes: u32,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<Example>,
        num_classes: u32,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.guid.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate guid {:?}",
                    ex.guid
                )));
            }
            if ex.gold >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "gold {} of {:?} not below {num_classes} classes",
                    ex.gold, ex.guid
                )));
            }
            if ex.features.dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: ex.features.dim(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            examples,
            num_classes,
            feature_dim,
        })
    }

    /// Read line-delimited JSON. Each line carries either `text` (hashed into
    /// `feature_dim` buckets) or explicit `features` as `[index, value]`
    /// pairs. Without `num_classes` the class count is inferred as the
    /// largest gold label plus one (at least 2).
    pub fn read_jsonl<R: BufRead>(
        source: R,
        name: impl Into<String>,
        feature_dim: usize,
        num_classes: Option<u32>,
    ) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Malformed {
                line: i + 1,
                message,
            };
            let parsed: ExampleLine =
                serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let features = match (parsed.text, parsed.features) {
                (Some(text), None) => featurize(&text, feature_dim)?,
                (None, Some(pairs)) => {
                    SparseVector::from_pairs(feature_dim, pairs).map_err(|e| bad(e.to_string()))?
                }
                _ => return Err(bad("need exactly one of `text` or `features`".into())),
            };
            examples.push(Example {
                guid: parsed.guid,
                split: parsed.split,
                gold: parsed.gold,
                features,
            });
        }
        let inferred = examples
            .iter()
            .map(|e| e.gold + 1)
            .max()
            .unwrap_or(2)
            .max(2);
        Dataset::new(name, examples, num_classes.unwrap_or(inferred), feature_dim)
    }

    /// Write in the `features` form of the JSONL format.
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(
                &mut sink,
                &FeatureLine {
                    guid: &ex.guid,
                    split: ex.split,
                    gold: ex.gold,
                    features: ex.features.entries(),
                },
            )?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn examples_mut(&mut self) -> &mut [Example] {
        &mut self.examples
    }

    /// Examples of one split, sorted by guid.
    pub fn split(&self, split: Split) -> Vec<&Example> {
        let mut v: Vec<&Example> = self.examples.iter().filter(|e| e.split == split).collect();
        v.sort_by(|a, b| a.guid.cmp(&b.guid));
        v
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    /// Copy of the dataset whose train split holds exactly `guids`. Every
    /// guid must name a train instance.
    pub fn with_train_subset(&self, guids: &[String]) -> Result<Dataset> {
        let wanted: HashSet<&str> = guids.iter().map(String::as_str).collect();
        let train: HashSet<&str> = self
            .examples
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.guid.as_str())
            .collect();
        if let Some(g) = guids.iter().find(|g| !train.contains(g.as_str())) {
            return Err(Error::UnknownGuid(g.clone()));
        }
        let examples = self
            .examples
            .iter()
            .filter(|e| e.split != Split::Train || wanted.contains(e.guid.as_str()))
            .cloned()
            .collect();
        Ok(Dataset {
            name: self.name.clone(),
            examples,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        })
    }
}
