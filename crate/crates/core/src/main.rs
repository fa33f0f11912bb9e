use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use log::info;

use cartograph::carto::{
    classify, select, write_selection, SelectionManifest, SelectionSpec, Strategy,
};
use cartograph::dynamics::{compute_all_with, MetricsTable};
use cartograph::dynlog::{parse_log, utc_timestamp, validate_stream, ParseOptions};
use cartograph::experiment::{run_experiment, ExperimentConfig};
use cartograph::noisebench::{run_benchmark, NoiseSpec};
use cartograph::render::{render_curves, render_map, CurveStyle, MapStyle};
use cartograph::report::{render_report, ExperimentManifest};
use cartograph::synth::TopicCorpus;
use cartograph::trainer::{
    evaluate_with, run_meta, train_with, CurveLog, Dataset, ModelState, Split, TrainConfig,
};
use cartograph::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "cartograph", version, about = "Training-dynamics data maps")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dynamics log against the format and report every violation.
    Validate {
        #[arg(long)]
        log: PathBuf,
    },
    /// Per-instance confidence, variability and correctness as CSV.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept logs where some instances miss epochs.
        #[arg(long)]
        allow_ragged: bool,
    },
    /// Assign every instance to easy, hard or ambiguous.
    Classify {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = 0.33)]
        easy: f64,
        #[arg(long, default_value_t = 0.33)]
        hard: f64,
        #[arg(long, default_value_t = 0.33)]
        ambiguous: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a training subset; writes a guid list and a manifest beside it.
    Select {
        #[arg(long)]
        metrics: PathBuf,
        /// easy, hard, ambiguous or random.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the softmax classifier and log its dynamics.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory for the log, curves and checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
        /// Restrict the train split to the guids in this list.
        #[arg(long)]
        subset: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Accuracy of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Render the data map of a metrics table as SVG.
    Map {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Most points drawn; larger tables are subsampled.
        #[arg(long, default_value_t = 25_000)]
        cap: usize,
        #[arg(long)]
        histograms: bool,
    },
    /// Render training curves as SVG.
    Curves {
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plant label noise, train, and score low-confidence ranking.
    NoiseBench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        /// Ranking depth; defaults to the number of flipped labels.
        #[arg(long)]
        k: Option<usize>,
        /// Seed of the noise injection.
        #[arg(long = "noise-seed", default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Markdown comparison table from an experiment manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train full, select ambiguous and random subsets, retrain and report.
    RunExperiment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.33)]
        fraction: f64,
        #[arg(long = "selection-seed", default_value_t = 0)]
        selection_seed: u64,
        /// Timestamp written into log headers; fix it for byte-identical reruns.
        #[arg(long)]
        created_at: Option<String>,
        #[arg(long, default_value = "exp")]
        run_prefix: String,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write the bundled synthetic topic corpus.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Trainer settings. Flags override the config file, which overrides defaults.
#[derive(Args)]
struct TrainArgs {
    /// TOML file with any of the trainer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    patience: Option<u32>,
    #[arg(long)]
    improvement_epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    keep_best: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
            None => TrainConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        take!(
            epochs,
            batch_size,
            learning_rate,
            l2,
            patience,
            improvement_epsilon,
            seed,
            feature_dim
        );
        c.keep_best |= self.keep_best;
        c.check()?;
        Ok(c)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_dataset(path: &Path, feature_dim: usize) -> Result<Dataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::read_jsonl(open(path)?, name, feature_dim, None)
}

fn read_metrics(path: &Path) -> Result<MetricsTable> {
    MetricsTable::read_csv(open(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Validate { log } => {
            let report = validate_stream(open(&log)?);
            print!("{report}");
            if !report.is_valid() {
                return Err(Error::InvalidRecord(format!(
                    "{} failed validation",
                    log.display()
                )));
            }
        }
        Command::Metrics {
            log,
            out,
            allow_ragged,
        } => {
            let parsed = parse_log(open(&log)?, ParseOptions { allow_ragged })?;
            let table = compute_all_with(&parsed, exec)?;
            info!(
                "{} instances over {} epochs",
                table.len(),
                parsed.observed_epochs()
            );
            table.write_csv(output(&out)?)?;
        }
        Command::Classify {
            metrics,
            easy,
            hard,
            ambiguous,
            out,
        } => {
            let table = read_metrics(&metrics)?;
            classify(&table, easy, hard, ambiguous)?.write_csv(output(&out)?)?;
        }
        Command::Select {
            metrics,
            strategy,
            fraction,
            seed,
            out,
        } => {
            let table = read_metrics(&metrics)?;
            let spec = SelectionSpec::new(strategy, fraction, seed)?;
            let guids = select(&table, &spec)?;
            let source = table.run_id().map(str::to_owned);
            write_selection(
                &out,
                &guids,
                &SelectionManifest::new(&spec, guids.len(), source),
            )?;
            info!("selected {} of {} instances", guids.len(), table.len());
        }
        Command::Train {
            data,
            out,
            run_id,
            subset,
            train,
        } => {
            let config = train.resolve()?;
            let mut dataset = load_dataset(&data, config.feature_dim)?;
            if let Some(list) = subset {
                let guids = cartograph::carto::read_guid_list(open(&list)?)?;
                dataset = dataset.with_train_subset(&guids)?;
            }
            std::fs::create_dir_all(&out)?;
            let mut meta = run_meta(&dataset, &config, &run_id);
            let sink = create(&out.join(format!("{run_id}.dynlog.jsonl")))?;
            let outcome = train_with(&dataset, &config, &mut meta, sink, exec)?;
            outcome
                .curves
                .write_csv(create(&out.join(format!("{run_id}.curves.csv")))?)?;
            let mut ckpt = create(&out.join(format!("{run_id}.model.json")))?;
            outcome.model.write_json(&mut ckpt)?;
            ckpt.flush()?;
            if let Some(best) = &outcome.best_model {
                let mut f = create(&out.join(format!("{run_id}.best.model.json")))?;
                best.write_json(&mut f)?;
                f.flush()?;
            }
            eprintln!(
                "{run_id}: {} epochs{}, best validation epoch {}",
                outcome.epochs_completed,
                if outcome.stopped_early {
                    " (stopped early)"
                } else {
                    ""
                },
                outcome.best_epoch
            );
        }
        Command::Evaluate { model, data, split } => {
            let model = ModelState::read_json(open(&model)?)?;
            let dataset = load_dataset(&data, model.feature_dim())?;
            let acc = evaluate_with(&model, &dataset, split, exec)?;
            println!("{acc}");
        }
        Command::Map {
            metrics,
            out,
            seed,
            cap,
            histograms,
        } => {
            let table = read_metrics(&metrics)?;
            let regions = classify(&table, 0.33, 0.33, 0.33)?;
            let style = MapStyle {
                sample_cap: cap,
                sample_seed: seed,
                histograms,
                ..MapStyle::default()
            };
            let svg = render_map(&table, &regions, &style)?;
            create(&out)?.write_all(svg.as_bytes())?;
        }
        Command::Curves { curves, out } => {
            let log = CurveLog::read_csv(open(&curves)?)?;
            let svg = render_curves(&log, &CurveStyle::default())?;
            create(&out)?.write_all(svg.as_bytes())?;
        }
        Command::NoiseBench {
            data,
            rate,
            k,
            noise_seed,
            out,
            train,
        } => {
            let config = train.resolve()?;
            let dataset = load_dataset(&data, config.feature_dim)?;
            let spec = NoiseSpec::new(rate, noise_seed)?;
            let bench = run_benchmark(&dataset, &config, &spec, k)?;
            std::fs::create_dir_all(&out)?;
            bench.write(
                create(&out.join("detection.json"))?,
                create(&out.join("flipped.txt"))?,
            )?;
            bench.metrics.write_csv(create(&out.join("metrics.csv"))?)?;
            print!("{}", bench.report);
        }
        Command::Report { manifest, out } => {
            let m: ExperimentManifest = serde_json::from_reader(open(&manifest)?)?;
            output(&out)?.write_all(render_report(&m)?.as_bytes())?;
        }
        Command::RunExperiment {
            data,
            out,
            fraction,
            selection_seed,
            created_at,
            run_prefix,
            train,
        } => {
            let train = train.resolve()?;
            let dataset = load_dataset(&data, train.feature_dim)?;
            let config = ExperimentConfig {
                train,
                fraction,
                selection_seed,
                created_at: Some(created_at.unwrap_or_else(utc_timestamp)),
                run_prefix,
                exec,
            };
            let label = data.display().to_string();
            let manifest = run_experiment(&dataset, &label, &config, &out)?;
            print!("{}", render_report(&manifest)?);
        }
        Command::SynthCorpus { out, seed } => {
            let mut corpus = TopicCorpus::default();
            if let Some(s) = seed {
                corpus.seed = s;
            }
            corpus.write_jsonl(create(&out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("CARTOGRAPH_LOG_LEVEL", "warn"),
    )
    .format_timestamp(None)
    .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
