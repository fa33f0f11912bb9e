use std::collections::BTreeSet;

use proptest::prelude::*;

use cartograph::carto::{
    classify, count, rank_hard_to_learn, read_guid_list, select, write_selection, Region,
    SelectionManifest, SelectionSpec, Strategy as Pick,
};
use cartograph::dynamics::{DynamicsMetrics, MetricsTable};
use cartograph::synth::synthetic_metrics;

fn table(rows: Vec<(f64, f64)>) -> MetricsTable {
    MetricsTable {
        meta: None,
        rows: rows
            .into_iter()
            .enumerate()
            .map(|(i, (confidence, variability))| DynamicsMetrics {
                guid: format!("g{i:04}"),
                confidence,
                variability,
                correctness: 0.5,
                epochs_used: 4,
            })
            .collect(),
    }
}

fn rows() -> impl Strategy<Value = Vec<(f64, f64)>> {
    // Coarse grids force ties so the tie-breaks get exercised.
    prop::collection::vec(
        (
            (0u32..=10).prop_map(|c| c as f64 / 10.0),
            (0u32..=5).prop_map(|v| v as f64 / 10.0),
        ),
        1..120,
    )
}

fn fraction() -> impl Strategy<Value = f64> {
    (1u32..=100).prop_map(|p| p as f64 / 100.0)
}

proptest! {
    #[test]
    fn count_rounds_half_up_within_bounds(f in fraction(), n in 1usize..5000) {
        let k = count(f, n);
        prop_assert!(k >= 1 && k <= n);
        let exact = f * n as f64;
        if exact >= 1.0 {
            prop_assert!((k as f64 - exact).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn every_strategy_returns_count_sorted_unique(r in rows(), f in fraction(), seed in any::<u64>()) {
        let t = table(r);
        for s in [Pick::Easy, Pick::Hard, Pick::Ambiguous, Pick::Random] {
            let got = select(&t, &SelectionSpec::new(s, f, seed).unwrap()).unwrap();
            prop_assert_eq!(got.len(), count(f, t.len()));
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn ambiguous_selection_dominates(r in rows(), f in fraction()) {
        let t = table(r);
        let chosen: BTreeSet<String> = select(&t, &SelectionSpec::new(Pick::Ambiguous, f, 0).unwrap())
            .unwrap()
            .into_iter()
            .collect();
        let min_in = t.rows.iter().filter(|r| chosen.contains(&r.guid)).map(|r| r.variability).fold(f64::INFINITY, f64::min);
        let max_out = t.rows.iter().filter(|r| !chosen.contains(&r.guid)).map(|r| r.variability).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_in >= max_out);
    }

    #[test]
    fn rank_based_selection_is_prefix_consistent(r in rows(), a in fraction(), b in fraction()) {
        let t = table(r);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for s in [Pick::Easy, Pick::Hard, Pick::Ambiguous] {
            let small: BTreeSet<String> = select(&t, &SelectionSpec::new(s, lo, 0).unwrap()).unwrap().into_iter().collect();
            let large: BTreeSet<String> = select(&t, &SelectionSpec::new(s, hi, 0).unwrap()).unwrap().into_iter().collect();
            prop_assert!(small.is_subset(&large));
        }
    }

    #[test]
    fn selection_ignores_row_order(r in rows(), f in fraction()) {
        let t = table(r);
        let mut rev = t.clone();
        rev.rows.reverse();
        for s in [Pick::Easy, Pick::Hard, Pick::Ambiguous] {
            let spec = SelectionSpec::new(s, f, 0).unwrap();
            prop_assert_eq!(select(&t, &spec).unwrap(), select(&rev, &spec).unwrap());
        }
    }

    #[test]
    fn classify_partitions_with_quotas(r in rows(), fe in 0u32..=33, fh in 0u32..=33, fa in 0u32..=33) {
        let t = table(r);
        let n = t.len();
        let (fe, fh, fa) = (fe as f64 / 100.0, fh as f64 / 100.0, fa as f64 / 100.0);
        let reg = classify(&t, fe, fh, fa).unwrap();
        prop_assert_eq!(reg.len(), n);
        let quota = |f: f64| if f == 0.0 { 0 } else { count(f, n) };
        let amb = reg.count_of(Region::Ambiguous);
        let easy = reg.count_of(Region::EasyToLearn);
        let hard = reg.count_of(Region::HardToLearn);
        prop_assert_eq!(amb, quota(fa));
        prop_assert_eq!(easy, quota(fe).min(n - amb));
        prop_assert_eq!(hard, quota(fh).min(n - amb - easy));
        prop_assert_eq!(amb + easy + hard + reg.count_of(Region::Other), n);
    }

    #[test]
    fn hard_ranking_is_lowest_confidence_first(r in rows(), k in 1usize..120) {
        let t = table(r);
        let k = k.min(t.len());
        let ranked = rank_hard_to_learn(&t, k).unwrap();
        let conf: Vec<f64> = ranked.iter().map(|g| t.get(g).unwrap().confidence).collect();
        prop_assert!(conf.windows(2).all(|w| w[0] <= w[1]));
        let worst_in = conf[k - 1];
        let chosen: BTreeSet<&String> = ranked.iter().collect();
        prop_assert!(t.rows.iter().filter(|r| !chosen.contains(&r.guid)).all(|r| r.confidence >= worst_in));
    }
}

#[test]
fn random_selection_depends_on_seed_only() {
    let t = synthetic_metrics(500, 1);
    let s1 = SelectionSpec::new(Pick::Random, 0.33, 11).unwrap();
    let s2 = SelectionSpec::new(Pick::Random, 0.33, 12).unwrap();
    assert_eq!(select(&t, &s1).unwrap(), select(&t, &s1).unwrap());
    assert_ne!(select(&t, &s1).unwrap(), select(&t, &s2).unwrap());
}

#[test]
fn fraction_must_be_in_unit_interval() {
    for f in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(SelectionSpec::new(Pick::Easy, f, 0).is_err());
    }
    assert!(SelectionSpec::new(Pick::Easy, 1.0, 0).is_ok());
    assert!(classify(&synthetic_metrics(10, 0), 0.5, 0.5, 0.5).is_err());
}

#[test]
fn selection_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = synthetic_metrics(200, 4);
    let spec = SelectionSpec::new(Pick::Ambiguous, 0.33, 7).unwrap();
    let guids = select(&t, &spec).unwrap();
    let path = dir.path().join("amb.txt");
    write_selection(
        &path,
        &guids,
        &SelectionManifest::new(&spec, guids.len(), Some("run-1".into())),
    )
    .unwrap();
    let back =
        read_guid_list(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, guids);
    let manifest: SelectionManifest = serde_json::from_reader(
        std::fs::File::open(SelectionManifest::sidecar_path(&path)).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.strategy, Pick::Ambiguous);
    assert_eq!(manifest.count, 66);
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.source_run_id.as_deref(), Some("run-1"));
    assert!(manifest.tool_version.starts_with("cartograph "));
}
