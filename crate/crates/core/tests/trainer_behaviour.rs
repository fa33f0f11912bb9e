use std::collections::BTreeSet;

use cartograph::carto::{select, SelectionSpec, Strategy};
use cartograph::dynamics::compute_all;
use cartograph::dynlog::{parse_log, ParseOptions};
use cartograph::synth::GaussianClusters;
use cartograph::trainer::{
    evaluate, objective, run_meta, train, train_with, Dataset, Example, ModelState, SparseVector,
    Split, TrainConfig,
};
use cartograph::Execution;

fn clusters(classes: u32, n_train: usize, seed: u64) -> Dataset {
    GaussianClusters {
        classes,
        dim: 10,
        separation: 2.0,
        noise_sd: 1.0,
        n_train,
        n_validation: 100,
        n_test: 400,
        seed,
    }
    .generate()
    .unwrap()
}

fn run(
    data: &Dataset,
    config: &TrainConfig,
    exec: Execution,
) -> (Vec<u8>, cartograph::trainer::TrainOutcome) {
    let mut meta = run_meta(data, config, "t").with_created_at("2024-01-01T00:00:00Z");
    let mut buf = Vec::new();
    let out = train_with(data, config, &mut meta, &mut buf, exec).unwrap();
    (buf, out)
}

#[test]
fn same_seed_same_bytes_in_either_execution_mode() {
    let data = clusters(3, 300, 1);
    let config = TrainConfig {
        epochs: 5,
        batch_size: 32,
        feature_dim: 10,
        seed: 4,
        ..TrainConfig::default()
    };
    let (a, ma) = run(&data, &config, Execution::Parallel);
    let (b, mb) = run(&data, &config, Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(ma.model.checksum(), mb.model.checksum());
    assert_eq!(ma.curves, mb.curves);

    let other = TrainConfig { seed: 5, ..config };
    let (c, _) = run(&data, &other, Execution::Parallel);
    assert_ne!(a, c, "shuffle seed had no effect");
}

#[test]
fn full_batch_loss_is_monotone_without_regularization() {
    let data = clusters(4, 200, 2);
    let config = TrainConfig {
        epochs: 25,
        batch_size: 200,
        learning_rate: 0.05,
        l2: 0.0,
        patience: 100,
        feature_dim: 10,
        ..TrainConfig::default()
    };
    let (_, out) = run(&data, &config, Execution::Sequential);
    let losses: Vec<f64> = out.curves.rows.iter().map(|r| r.mean_loss).collect();
    assert_eq!(losses.len(), 25);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss rose: {losses:?}");
    }

    // The curve's mean loss is the objective of the final model on the train split.
    let train_split = data.split(Split::Train);
    let batch: Vec<(&SparseVector, u32)> =
        train_split.iter().map(|e| (&e.features, e.gold)).collect();
    let obj = objective(&out.model, &batch, 0.0).unwrap();
    assert!((obj - losses[24]).abs() <= 1e-12);
}

#[test]
fn log_has_one_record_per_instance_per_completed_epoch() {
    let data = clusters(2, 150, 3);
    let config = TrainConfig {
        epochs: 6,
        feature_dim: 10,
        ..TrainConfig::default()
    };
    let (bytes, out) = run(&data, &config, Execution::Parallel);
    let log = parse_log(bytes.as_slice(), ParseOptions::default()).unwrap();
    assert_eq!(log.num_instances(), 150);
    assert_eq!(log.observed_epochs(), out.epochs_completed);
    assert_eq!(log.meta.planned_epochs, 6);
    assert_eq!(log.meta.num_train_instances, 150);
    let metrics = compute_all(&log).unwrap();
    let acc_last = out.curves.rows.last().unwrap().train_acc;
    let correct_last = log
        .iter()
        .filter(|(inst, s)| s.last().unwrap().pred == inst.gold)
        .count() as f64
        / 150.0;
    assert_eq!(acc_last, correct_last);
    assert!(metrics
        .rows
        .iter()
        .all(|r| r.epochs_used == out.epochs_completed));
}

#[test]
fn subset_run_logs_exactly_the_selection() {
    let data = clusters(3, 300, 5);
    let config = TrainConfig {
        epochs: 4,
        feature_dim: 10,
        ..TrainConfig::default()
    };
    let (bytes, _) = run(&data, &config, Execution::Parallel);
    let metrics =
        compute_all(&parse_log(bytes.as_slice(), ParseOptions::default()).unwrap()).unwrap();
    for strategy in [Strategy::Ambiguous, Strategy::Random] {
        let guids = select(&metrics, &SelectionSpec::new(strategy, 0.33, 9).unwrap()).unwrap();
        let subset = data.with_train_subset(&guids).unwrap();
        assert_eq!(subset.split_len(Split::Train), 99);
        assert_eq!(subset.split_len(Split::Test), data.split_len(Split::Test));
        let (sub_bytes, _) = run(&subset, &config, Execution::Parallel);
        let log = parse_log(sub_bytes.as_slice(), ParseOptions::default()).unwrap();
        let logged: BTreeSet<&str> = log.instances().iter().map(|i| i.guid.as_str()).collect();
        let wanted: BTreeSet<&str> = guids.iter().map(String::as_str).collect();
        assert_eq!(logged, wanted);
    }
    assert!(data.with_train_subset(&["test-00000".to_owned()]).is_err());
}

#[test]
fn untrained_model_scores_chance_on_balanced_classes() {
    let data = clusters(4, 40, 6);
    let zero = ModelState::zeros(4, 10);
    let acc = evaluate(&zero, &data, Split::Test).unwrap();
    assert!((acc - 0.25).abs() <= 0.03, "accuracy {acc}");
}

#[test]
fn keep_best_returns_best_validation_model() {
    let data = clusters(3, 300, 7);
    let config = TrainConfig {
        epochs: 8,
        feature_dim: 10,
        keep_best: true,
        ..TrainConfig::default()
    };
    let (_, out) = run(&data, &config, Execution::Parallel);
    let best = out.best_model.expect("best model kept");
    assert_eq!(best.epoch, out.best_epoch);
    let best_val = out.curves.rows[out.best_epoch as usize].val_acc;
    assert_eq!(evaluate(&best, &data, Split::Validation).unwrap(), best_val);
    assert!(out.curves.rows.iter().all(|r| r.val_acc <= best_val));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let data = clusters(3, 200, 8);
    let config = TrainConfig {
        epochs: 3,
        feature_dim: 10,
        ..TrainConfig::default()
    };
    let (_, out) = run(&data, &config, Execution::Parallel);
    let mut buf = Vec::new();
    out.model.write_json(&mut buf).unwrap();
    let back = ModelState::read_json(buf.as_slice()).unwrap();
    assert_eq!(back.checksum(), out.model.checksum());
    for split in [Split::Train, Split::Test] {
        assert_eq!(
            evaluate(&back, &data, split).unwrap(),
            evaluate(&out.model, &data, split).unwrap()
        );
    }
}

#[test]
fn text_datasets_are_hashed_consistently() {
    let text = "\
{\"guid\":\"a\",\"split\":\"train\",\"gold\":0,\"text\":\"chest pain troponin\"}
{\"guid\":\"b\",\"split\":\"train\",\"gold\":1,\"text\":\"seizure aura MRI\"}
{\"guid\":\"c\",\"split\":\"validation\",\"gold\":0,\"features\":[[3,1.0]]}
";
    let data = Dataset::read_jsonl(text.as_bytes(), "tiny", 64, None).unwrap();
    assert_eq!(data.num_classes(), 2);
    let a: &Example = data.split(Split::Train)[0];
    assert!((a.features.norm() - 1.0).abs() < 1e-12);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 1,
        feature_dim: 64,
        ..TrainConfig::default()
    };
    let out = train(
        &data,
        &config,
        run_meta(&data, &config, "tiny"),
        std::io::sink(),
    )
    .unwrap();
    assert_eq!(out.epochs_completed, 2);
}
