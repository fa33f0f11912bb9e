//! The full-data / random-subset / ambiguous-subset protocol as one seeded
//! pipeline.
//!
//! Steps: evaluate the untrained model, train on the full train split while
//! logging dynamics, compute metrics and regions, select the ambiguous and a
//! random subset of `fraction` of the train split, retrain on each subset,
//! evaluate every model on the test and OOD splits, and write the manifest
//! and report. Every file lands in one output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::carto::{classify, select, write_selection, SelectionManifest, SelectionSpec, Strategy};
use crate::dynamics::compute_all;
use crate::dynlog::{parse_log, utc_timestamp, ParseOptions};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::render::{render_curves, render_map, CurveStyle, MapStyle};
use crate::report::{render_report, ExperimentManifest, RunEntry, RunLabel};
use crate::trainer::{
    evaluate_with, run_meta, train_with, Dataset, ModelState, Split, TrainConfig,
};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub fraction: f64,
    pub selection_seed: u64,
    /// Timestamp stamped into every log header; the current time when unset.
    pub created_at: Option<String>,
    pub run_prefix: String,
    pub exec: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            fraction: 0.33,
            selection_seed: 0,
            created_at: None,
            run_prefix: "exp".into(),
            exec: Execution::default(),
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool_version: &'a str,
    dataset: &'a str,
    created_at: &'a str,
    seeds: &'a BTreeMap<String, u64>,
    train_config: &'a TrainConfig,
    fraction: f64,
    files: Vec<(String, String)>,
}

struct TrainedRun {
    model: ModelState,
    guids_logged: Vec<String>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn train_run(
    dataset: &Dataset,
    config: &TrainConfig,
    run_id: &str,
    created_at: &str,
    dir: &Path,
    exec: Execution,
) -> Result<TrainedRun> {
    let mut meta = run_meta(dataset, config, run_id).with_created_at(created_at);
    let log_name = format!("{run_id}.dynlog.jsonl");
    let outcome = train_with(dataset, config, &mut meta, create(dir, &log_name)?, exec)?;
    outcome
        .curves
        .write_csv(create(dir, &format!("{run_id}.curves.csv"))?)?;
    let mut ckpt = create(dir, &format!("{run_id}.model.json"))?;
    outcome.model.write_json(&mut ckpt)?;
    ckpt.flush()?;
    let log = parse_log(
        BufReader::new(File::open(dir.join(&log_name))?),
        ParseOptions::default(),
    )?;
    Ok(TrainedRun {
        model: outcome.model,
        guids_logged: log.instances().iter().map(|i| i.guid.clone()).collect(),
    })
}

/// Run the protocol on `dataset`, writing all artifacts into `out_dir`.
pub fn run_experiment(
    dataset: &Dataset,
    dataset_label: &str,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentManifest> {
    config.train.check()?;
    SelectionSpec::new(Strategy::Random, config.fraction, config.selection_seed)?;
    for split in [Split::Train, Split::Validation, Split::Test, Split::Ood] {
        if dataset.split_len(split) == 0 {
            return Err(Error::Empty(format!("{split} split")));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let created_at = config.created_at.clone().unwrap_or_else(utc_timestamp);
    let exec = config.exec;
    let prefix = &config.run_prefix;
    let eval = |m: &ModelState| -> Result<(f64, f64)> {
        Ok((
            evaluate_with(m, dataset, Split::Test, exec)?,
            evaluate_with(m, dataset, Split::Ood, exec)?,
        ))
    };

    let mut seeds = BTreeMap::new();
    seeds.insert("selection".to_owned(), config.selection_seed);
    let mut runs = Vec::new();

    let baseline = ModelState::zeros(dataset.num_classes(), dataset.feature_dim());
    let (test, ood) = eval(&baseline)?;
    runs.push(RunEntry {
        label: RunLabel::PretrainedBaseline,
        run_id: format!("{prefix}-untrained"),
        selection_manifest: None,
        seed: None,
        test_accuracy: test,
        ood_accuracy: ood,
    });

    let full_id = format!("{prefix}-full");
    info!("training {full_id}");
    let full = train_run(dataset, &config.train, &full_id, &created_at, out_dir, exec)?;
    seeds.insert(full_id.clone(), config.train.seed);
    let (test, ood) = eval(&full.model)?;
    runs.push(RunEntry {
        label: RunLabel::Full,
        run_id: full_id.clone(),
        selection_manifest: None,
        seed: Some(config.train.seed),
        test_accuracy: test,
        ood_accuracy: ood,
    });

    let log = parse_log(
        BufReader::new(File::open(out_dir.join(format!("{full_id}.dynlog.jsonl")))?),
        ParseOptions::default(),
    )?;
    let metrics = compute_all(&log)?;
    metrics.write_csv(create(out_dir, &format!("{full_id}.metrics.csv"))?)?;
    let regions = classify(&metrics, 0.33, 0.33, 0.33)?;
    regions.write_csv(create(out_dir, &format!("{full_id}.regions.csv"))?)?;
    let map = render_map(&metrics, &regions, &MapStyle::default())?;
    std::fs::write(out_dir.join(format!("{full_id}.map.svg")), map)?;
    let curves = crate::trainer::CurveLog::read_csv(File::open(
        out_dir.join(format!("{full_id}.curves.csv")),
    )?)?;
    std::fs::write(
        out_dir.join(format!("{full_id}.curves.svg")),
        render_curves(&curves, &CurveStyle::default())?,
    )?;

    let subsets = [
        (RunLabel::Random33, Strategy::Random, "random", 1u64),
        (
            RunLabel::Ambiguous33,
            Strategy::Ambiguous,
            "ambiguous",
            2u64,
        ),
    ];
    let mut prepared = Vec::new();
    for (label, strategy, name, seed_offset) in subsets {
        let spec = SelectionSpec::new(strategy, config.fraction, config.selection_seed)?;
        let guids = select(&metrics, &spec)?;
        let pct = (config.fraction * 100.0).round() as u32;
        let run_id = format!("{prefix}-{name}{pct}");
        let list = out_dir.join(format!("{run_id}.selection.txt"));
        write_selection(
            &list,
            &guids,
            &SelectionManifest::new(&spec, guids.len(), Some(full_id.clone())),
        )?;
        let mut cfg = config.train.clone();
        cfg.seed = config.train.seed.wrapping_add(seed_offset);
        seeds.insert(run_id.clone(), cfg.seed);
        prepared.push((label, run_id, list, guids, cfg));
    }

    let run_subset = |(_, run_id, _, guids, cfg): &(
        RunLabel,
        String,
        PathBuf,
        Vec<String>,
        TrainConfig,
    )|
     -> Result<TrainedRun> {
        info!("training {run_id} on {} instances", guids.len());
        let subset = dataset.with_train_subset(guids)?;
        let trained = train_run(&subset, cfg, run_id, &created_at, out_dir, exec)?;
        if &trained.guids_logged != guids {
            return Err(Error::InvalidArgument(format!(
                "run {run_id} logged {} instances, selection has {}",
                trained.guids_logged.len(),
                guids.len()
            )));
        }
        Ok(trained)
    };
    let (a, b) = exec.join(|| run_subset(&prepared[0]), || run_subset(&prepared[1]));
    for ((label, run_id, list, _, cfg), trained) in prepared.iter().zip([a?, b?]) {
        let (test, ood) = eval(&trained.model)?;
        runs.push(RunEntry {
            label: *label,
            run_id: run_id.clone(),
            selection_manifest: Some(
                SelectionManifest::sidecar_path(list)
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            ),
            seed: Some(cfg.seed),
            test_accuracy: test,
            ood_accuracy: ood,
        });
    }

    let manifest = ExperimentManifest {
        dataset: dataset_label.to_owned(),
        runs,
        seeds,
        tool_version: crate::TOOL_VERSION.to_owned(),
    };
    let mut mf = create(out_dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut mf, &manifest)?;
    mf.write_all(b"\n")?;
    mf.flush()?;
    std::fs::write(out_dir.join("report.md"), render_report(&manifest)?)?;

    let mut files: Vec<(String, String)> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "provenance.json")
        .map(|n| {
            let run = manifest
                .runs
                .iter()
                .find(|r| n.starts_with(&format!("{}.", r.run_id)))
                .map_or_else(|| "experiment".to_owned(), |r| r.run_id.clone());
            (n, run)
        })
        .collect();
    files.sort();
    let prov = Provenance {
        tool_version: crate::TOOL_VERSION,
        dataset: dataset_label,
        created_at: &created_at,
        seeds: &manifest.seeds,
        train_config: &config.train,
        fraction: config.fraction,
        files,
    };
    let mut pf = create(out_dir, "provenance.json")?;
    serde_json::to_writer_pretty(&mut pf, &prov)?;
    pf.write_all(b"\n")?;
    pf.flush()?;
    Ok(manifest)
}
