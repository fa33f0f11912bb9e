//! Experiment manifests and the accuracy comparison table.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunLabel {
    PretrainedBaseline,
    Full,
    Random33,
    Ambiguous33,
    Custom,
}

impl RunLabel {
    fn row_name(self) -> &'static str {
        match self {
            RunLabel::PretrainedBaseline => "pretrained",
            RunLabel::Full => "100% train",
            RunLabel::Random33 => "33% random",
            RunLabel::Ambiguous33 => "33% ambiguous",
            RunLabel::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: RunLabel,
    pub run_id: String,
    /// Path of the selection manifest the run trained on, if any.
    #[serde(default)]
    pub selection_manifest: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub test_accuracy: f64,
    pub ood_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub dataset: String,
    pub runs: Vec<RunEntry>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub tool_version: String,
}

impl ExperimentManifest {
    pub fn check(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Empty("experiment manifest has no runs".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.runs {
            if !seen.insert(r.label) {
                return Err(Error::InvalidArgument(format!(
                    "label {:?} appears twice",
                    r.label
                )));
            }
            for acc in [r.test_accuracy, r.ood_accuracy] {
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::InvalidArgument(format!(
                        "accuracy {acc} of run {:?} outside [0, 1]",
                        r.run_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn percent(acc: f64) -> String {
    format!("{:.2}", acc * 100.0)
}

/// Markdown comparison table: one row per run, test (in-distribution) and
/// OOD accuracy as percentages with two decimals. In each column every
/// value equal to the column maximum *as printed* is bold, so ties are all
/// emphasized.
pub fn render_report(manifest: &ExperimentManifest) -> Result<String> {
    manifest.check()?;
    let cells: Vec<[String; 2]> = manifest
        .runs
        .iter()
        .map(|r| [percent(r.test_accuracy), percent(r.ood_accuracy)])
        .collect();
    let best: Vec<f64> = (0..2)
        .map(|col| {
            cells
                .iter()
                .map(|c| c[col].parse::<f64>().expect("formatted number"))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let mut out = String::new();
    let _ = writeln!(out, "| run | Test (ID) | OOD |");
    let _ = writeln!(out, "|---|:---:|:---:|");
    for (run, c) in manifest.runs.iter().zip(&cells) {
        let name = match run.label {
            RunLabel::Custom => run.run_id.as_str(),
            other => other.row_name(),
        };
        let shown: Vec<String> = c
            .iter()
            .enumerate()
            .map(|(col, v)| {
                if v.parse::<f64>().expect("formatted number") == best[col] {
                    format!("**{v}**")
                } else {
                    v.clone()
                }
            })
            .collect();
        let _ = writeln!(out, "| {name} | {} | {} |", shown[0], shown[1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(label: RunLabel, test: f64, ood: f64) -> RunEntry {
        RunEntry {
            label,
            run_id: format!("{label:?}"),
            selection_manifest: None,
            seed: None,
            test_accuracy: test,
            ood_accuracy: ood,
        }
    }

    fn manifest(runs: Vec<RunEntry>) -> ExperimentManifest {
        ExperimentManifest {
            dataset: "d".into(),
            runs,
            seeds: BTreeMap::new(),
            tool_version: String::new(),
        }
    }

    #[test]
    fn single_run_bold_everywhere() {
        let r = render_report(&manifest(vec![entry(RunLabel::Full, 0.5, 0.25)])).unwrap();
        assert!(r.contains("| 100% train | **50.00** | **25.00** |"));
    }

    #[test]
    fn ties_are_all_bold() {
        let r = render_report(&manifest(vec![
            entry(RunLabel::Random33, 0.40, 0.30),
            entry(RunLabel::Ambiguous33, 0.40, 0.20),
        ]))
        .unwrap();
        assert!(r.contains("| 33% random | **40.00** | **30.00** |"));
        assert!(r.contains("| 33% ambiguous | **40.00** | 20.00 |"));
    }

    #[test]
    fn manifest_checks() {
        assert!(render_report(&manifest(vec![])).is_err());
        assert!(render_report(&manifest(vec![
            entry(RunLabel::Full, 0.5, 0.5),
            entry(RunLabel::Full, 0.4, 0.4)
        ]))
        .is_err());
        assert!(render_report(&manifest(vec![entry(RunLabel::Full, 1.5, 0.5)])).is_err());
    }

    #[test]
    fn custom_rows_use_run_id() {
        let mut e = entry(RunLabel::Custom, 0.1, 0.2);
        e.run_id = "hard-20".into();
        let r = render_report(&manifest(vec![e])).unwrap();
        assert!(r.contains("| hard-20 |"));
    }
}
