//! Seeded synthetic data: Gaussian-cluster datasets, a four-topic text
//! corpus, and large dynamics logs / metrics tables for scale tests.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::dynamics::{DynamicsMetrics, MetricsTable};
use crate::dynlog::{RunMeta, SnapshotRecord};
use crate::error::Result;
use crate::rng::{seeded, Stream};
use crate::trainer::{Dataset, Example, SparseVector, Split};

/// Isotropic Gaussian blobs, one per class. Class `c` is centred at
/// `separation` along axis `c`, so classes are linearly separable with
/// overwhelming probability once `separation` is several `noise_sd`.
#[derive(Debug, Clone)]
pub struct GaussianClusters {
    pub classes: u32,
    pub dim: usize,
    pub separation: f64,
    pub noise_sd: f64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl GaussianClusters {
    pub fn generate(&self) -> Result<Dataset> {
        assert!(self.dim >= self.classes as usize, "need one axis per class");
        let mut rng = seeded(self.seed, Stream::Synthetic);
        let noise = Normal::new(0.0, self.noise_sd).expect("finite sd");
        let mut examples = Vec::new();
        for (split, n) in [
            (Split::Train, self.n_train),
            (Split::Validation, self.n_validation),
            (Split::Test, self.n_test),
        ] {
            for i in 0..n {
                let gold = (i % self.classes as usize) as u32;
                let pairs = (0..self.dim).map(|j| {
                    let centre = if j == gold as usize {
                        self.separation
                    } else {
                        0.0
                    };
                    (j as u32, centre + noise.sample(&mut rng))
                });
                examples.push(Example {
                    guid: format!("{}-{i:05}", split.as_str()),
                    split,
                    gold,
                    features: SparseVector::from_pairs(self.dim, pairs)?,
                });
            }
        }
        Dataset::new(
            format!("clusters-c{}-d{}-s{}", self.classes, self.dim, self.seed),
            examples,
            self.classes,
            self.dim,
        )
    }
}

/// The fixture used by the label-noise benchmark: 4 classes, 2000 train
/// instances, 50 dimensions.
pub fn noise_fixture(seed: u64) -> Result<Dataset> {
    GaussianClusters {
        classes: 4,
        dim: 50,
        separation: 4.0,
        noise_sd: 1.0,
        n_train: 2000,
        n_validation: 400,
        n_test: 400,
        seed,
    }
    .generate()
}

const TOPICS: [(&str, &[&str], &[&str]); 4] = [
    (
        "cardiology",
        &[
            "chest",
            "pain",
            "angina",
            "troponin",
            "ecg",
            "st",
            "elevation",
            "murmur",
            "systolic",
            "diastolic",
            "palpitations",
            "arrhythmia",
            "atrial",
            "fibrillation",
            "ventricular",
            "infarction",
            "coronary",
            "stent",
            "statin",
            "aspirin",
            "heart",
            "failure",
            "edema",
            "ejection",
            "fraction",
            "valve",
            "aortic",
            "stenosis",
            "hypertension",
            "beta",
        ],
        &[
            "pericarditis",
            "tamponade",
            "endocarditis",
            "cardiomyopathy",
            "bradycardia",
            "digoxin",
            "amiodarone",
            "warfarin",
            "syncope",
            "orthopnea",
            "dyslipidemia",
            "claudication",
            "aneurysm",
            "dissection",
            "pacemaker",
        ],
    ),
    (
        "neurology",
        &[
            "headache",
            "seizure",
            "stroke",
            "weakness",
            "numbness",
            "aphasia",
            "tremor",
            "gait",
            "ataxia",
            "reflexes",
            "cranial",
            "nerve",
            "mri",
            "lesion",
            "cortex",
            "migraine",
            "aura",
            "epilepsy",
            "confusion",
            "memory",
            "dementia",
            "parkinson",
            "neuropathy",
            "spinal",
            "cord",
            "lumbar",
            "puncture",
            "meningeal",
            "vertigo",
            "diplopia",
        ],
        &[
            "myasthenia",
            "gravis",
            "guillain",
            "barre",
            "sclerosis",
            "chorea",
            "dystonia",
            "hydrocephalus",
            "levodopa",
            "carbamazepine",
            "valproate",
            "nystagmus",
            "ptosis",
            "dysarthria",
            "neuralgia",
        ],
    ),
    (
        "infectious",
        &[
            "fever",
            "chills",
            "cough",
            "sputum",
            "culture",
            "bacteria",
            "viral",
            "infection",
            "antibiotic",
            "penicillin",
            "gram",
            "positive",
            "negative",
            "sepsis",
            "abscess",
            "rash",
            "lymph",
            "nodes",
            "travel",
            "exposure",
            "vaccine",
            "hiv",
            "tuberculosis",
            "pneumonia",
            "urinary",
            "dysuria",
            "leukocytosis",
            "malaria",
            "hepatitis",
            "cellulitis",
        ],
        &[
            "syphilis",
            "chancre",
            "toxoplasmosis",
            "cryptococcus",
            "histoplasmosis",
            "vancomycin",
            "ceftriaxone",
            "doxycycline",
            "rickettsia",
            "lyme",
            "erythema",
            "migrans",
            "mononucleosis",
            "measles",
            "tetanus",
        ],
    ),
    (
        "oncology",
        &[
            "mass",
            "tumor",
            "biopsy",
            "malignant",
            "carcinoma",
            "metastasis",
            "lymphoma",
            "leukemia",
            "chemotherapy",
            "radiation",
            "weight",
            "loss",
            "night",
            "sweats",
            "staging",
            "marker",
            "nodule",
            "smoking",
            "breast",
            "lung",
            "colon",
            "prostate",
            "screening",
            "mammogram",
            "colonoscopy",
            "anemia",
            "fatigue",
            "cachexia",
            "oncogene",
            "remission",
        ],
        &[
            "melanoma",
            "sarcoma",
            "myeloma",
            "neuroblastoma",
            "seminoma",
            "cisplatin",
            "tamoxifen",
            "rituximab",
            "paraneoplastic",
            "hypercalcemia",
            "carcinoid",
            "mesothelioma",
            "glioblastoma",
            "pheochromocytoma",
            "retinoblastoma",
        ],
    ),
];

const SHARED: &[&str] = &[
    "a",
    "the",
    "patient",
    "year",
    "old",
    "man",
    "woman",
    "presents",
    "with",
    "history",
    "of",
    "and",
    "to",
    "emergency",
    "department",
    "examination",
    "shows",
    "laboratory",
    "studies",
    "which",
    "is",
    "most",
    "likely",
    "diagnosis",
    "next",
    "best",
    "step",
    "in",
    "management",
    "blood",
    "pressure",
    "pulse",
    "temperature",
    "days",
    "weeks",
    "months",
    "mild",
    "severe",
    "acute",
    "chronic",
    "physical",
    "normal",
    "elevated",
    "decreased",
    "treatment",
    "therapy",
    "medication",
    "clinic",
    "hospital",
    "family",
    "smoker",
    "alcohol",
    "denies",
    "reports",
    "initial",
    "follow",
    "up",
    "dose",
    "oral",
    "intravenous",
];

/// Parameters of the four-topic clinical-vignette corpus.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_ood: usize,
    /// Fraction of in-distribution documents that blend two topics.
    pub blend_rate: f64,
    /// Fraction of train documents carrying a wrong label.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for TopicCorpus {
    fn default() -> Self {
        TopicCorpus {
            n_train: 6000,
            n_validation: 800,
            n_test: 1200,
            n_ood: 600,
            blend_rate: 0.25,
            label_noise: 0.04,
            seed: 20_240_601,
        }
    }
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    guid: &'a str,
    split: Split,
    gold: u32,
    text: &'a str,
}

/// Class names of the topic corpus, indexed by label.
pub fn topic_names() -> [&'static str; 4] {
    TOPICS.map(|t| t.0)
}

impl TopicCorpus {
    fn document<R: Rng>(&self, rng: &mut R, gold: usize, ood: bool) -> String {
        let len = rng.random_range(12..=28);
        let (topic_rate, rare_rate) = if ood { (0.22, 0.75) } else { (0.35, 0.08) };
        let blend = !ood && rng.random_bool(self.blend_rate);
        let other = (gold + rng.random_range(1..4)) % 4;
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random_bool(topic_rate) {
                let topic = if blend && rng.random_bool(0.45) {
                    other
                } else {
                    gold
                };
                let (_, common, rare) = TOPICS[topic];
                let pool = if rng.random_bool(rare_rate) {
                    rare
                } else {
                    common
                };
                words.push(pool[rng.random_range(0..pool.len())]);
            } else {
                words.push(SHARED[rng.random_range(0..SHARED.len())]);
            }
        }
        words.join(" ")
    }

    /// Write the corpus as dataset JSONL (text form).
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut rng = seeded(self.seed, Stream::Synthetic);
        for (split, n) in [
            (Split::Train, self.n_train),
            (Split::Validation, self.n_validation),
            (Split::Test, self.n_test),
            (Split::Ood, self.n_ood),
        ] {
            for i in 0..n {
                let gold = rng.random_range(0..4usize);
                let text = self.document(&mut rng, gold, split == Split::Ood);
                let mut label = gold as u32;
                if split == Split::Train && rng.random_bool(self.label_noise) {
                    label = ((gold + rng.random_range(1..4)) % 4) as u32;
                }
                let guid = format!("{}-{i:05}", split.as_str());
                serde_json::to_writer(
                    &mut sink,
                    &CorpusLine {
                        guid: &guid,
                        split,
                        gold: label,
                        text: &text,
                    },
                )?;
                sink.write_all(b"\n")?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}

/// Records of a dense synthetic run, epoch-major with guids `i000000..`.
///
/// Each instance follows its own noisy learning curve so that confidence
/// and variability spread across the map.
pub fn synthetic_log(
    n: usize,
    epochs: u32,
    classes: u32,
    seed: u64,
) -> (RunMeta, impl Iterator<Item = SnapshotRecord>) {
    let meta = RunMeta::new(
        format!("synthetic-{n}x{epochs}"),
        "synthetic",
        classes,
        epochs,
    )
    .with_train_instances(n as u64)
    .with_created_at("1970-01-01T00:00:00Z");
    let mut rng = seeded(seed, Stream::Synthetic);
    let profiles: Vec<(f64, f64, u32)> = (0..n)
        .map(|_| {
            let start: f64 = rng.random_range(0.0..0.6);
            let end: f64 = rng.random_range(0.0..1.0);
            (start, end, rng.random_range(0..classes))
        })
        .collect();
    let records = (0..epochs).flat_map(move |e| {
        let t = if epochs > 1 {
            e as f64 / (epochs - 1) as f64
        } else {
            1.0
        };
        let mut rng = seeded(
            seed ^ u64::from(e).wrapping_mul(0x9e37_79b9),
            Stream::Synthetic,
        );
        let profiles = profiles.clone();
        (0..n).map(move |i| {
            let (start, end, gold) = profiles[i];
            let jitter: f64 = rng.random_range(-0.1..0.1);
            let p = (start + (end - start) * t + jitter).clamp(0.0, 1.0);
            let pred = if p > 0.5 { gold } else { (gold + 1) % classes };
            SnapshotRecord {
                epoch: e,
                guid: format!("i{i:06}"),
                gold,
                p_gold: p,
                pred,
            }
        })
    });
    (meta, records)
}

/// A metrics table of `n` rows with confidence in [0, 1], variability in
/// [0, 0.5] and correctness on a 21-value grid.
pub fn synthetic_metrics(n: usize, seed: u64) -> MetricsTable {
    let mut rng = seeded(seed, Stream::Synthetic);
    let rows = (0..n)
        .map(|i| {
            let confidence: f64 = rng.random_range(0.0..=1.0);
            let cap = (confidence * (1.0 - confidence)).sqrt();
            let variability = rng.random_range(0.0..=1.0) * cap;
            let correctness = (confidence * 20.0).round() / 20.0;
            DynamicsMetrics {
                guid: format!("i{i:06}"),
                confidence,
                variability,
                correctness,
                epochs_used: 20,
            }
        })
        .collect();
    MetricsTable {
        meta: Some(
            RunMeta::new("synthetic-metrics", "synthetic", 4, 20)
                .with_train_instances(n as u64)
                .with_created_at("1970-01-01T00:00:00Z"),
        ),
        rows,
    }
}
