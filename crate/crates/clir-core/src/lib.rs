//! Data pipeline and measurement toolkit for Korean-English cross-lingual
//! retrieval experiments: triple deduplication, hard-negative mining,
//! language-combination expansion, NDCG@10 evaluation across task
//! directions, weight-averaged checkpoint merging with all-pairs sweeps,
//! and AVG/OVR score reporting.
//!
//! The `clir-lab` binary in the companion CLI crate wires these modules
//! into a single pipeline over JSONL, TREC qrels, EMB1 embedding files and
//! flat tensor archives.

pub mod dedup;
pub mod domain;
pub mod error;
pub mod evaluator;
pub mod ingest;
pub mod merger;
pub mod miner;
pub mod permute;
pub mod report;

pub use domain::{
    all_combos, classify_combo, parse_combo, parse_direction, BilingualText, ComboClass,
    LangCombo, Language, Score, TaskDirection, TrainingExample, Triple,
};
pub use error::{Error, Result};
