use std::path::Path;

use cartograph::synth::TopicCorpus;
use cartograph::trainer::{Dataset, Split};

fn bundled() -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/topics.jsonl")).unwrap()
}

#[test]
fn bundled_corpus_is_reproducible_from_its_seed() {
    let mut regenerated = Vec::new();
    TopicCorpus::default()
        .write_jsonl(&mut regenerated)
        .unwrap();
    assert!(
        regenerated == bundled(),
        "data/topics.jsonl is stale; regenerate with `cartograph synth-corpus`"
    );
}

#[test]
fn bundled_corpus_shape() {
    let data = Dataset::read_jsonl(bundled().as_slice(), "topics", 1 << 12, None).unwrap();
    assert_eq!(data.num_classes(), 4);
    assert_eq!(data.split_len(Split::Train), 6000);
    assert_eq!(data.split_len(Split::Validation), 800);
    assert_eq!(data.split_len(Split::Test), 1200);
    assert_eq!(data.split_len(Split::Ood), 600);
    for class in 0..4 {
        let n = data
            .split(Split::Test)
            .iter()
            .filter(|e| e.gold == class)
            .count();
        assert!(n > 200, "class {class} has {n} test rows");
    }
}
