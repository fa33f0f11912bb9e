//! Training-dynamics logging, per-instance metrics and data maps.
//!
//! A run's dynamics log ([`dynlog`]) records, for every train instance and
//! epoch, the probability the model assigns to the gold label and the
//! predicted label. From it [`dynamics`] derives confidence, variability and
//! correctness, [`carto`] splits instances into easy-to-learn,
//! hard-to-learn and ambiguous regions and selects training subsets, and
//! [`render`] draws the map. [`trainer`] is a small softmax classifier that
//! writes such logs, [`experiment`] chains everything into the subset
//! retraining protocol and [`noisebench`] checks how well low confidence
//! flags mislabeled instances.

pub mod carto;
pub mod dynamics;
pub mod dynlog;
pub mod error;
pub mod experiment;
pub mod noisebench;
pub mod par;
pub mod render;
pub mod report;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use par::Execution;

/// Recorded in selection manifests and experiment provenance.
pub const TOOL_VERSION: &str = concat!("cartograph ", env!("CARGO_PKG_VERSION"));
