//! Weight-averaged checkpoint merging and the all-pairs merge sweep.
//!
//! A merge is the element-wise convex combination
//! `alpha * anchor + (1 - alpha) * pair`, computed in f32. F16 parents are
//! upcast for the arithmetic and written back as F32 so repeated merges do
//! not compound rounding. Endpoint alphas copy the parent verbatim.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::TaskDirection;
use crate::error::{Error, Result};
use crate::evaluator::{run_task, EvalTask};
use crate::ingest::emb1::read_embeddings;
use crate::ingest::tensors::{read_tensor_archive, write_tensor_archive, Tensor, TensorArchive};
use crate::ingest::{read_corpus, read_qrels, read_queries};

/// Parameters of one merge: which parent is the anchor and its weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeSpec {
    pub anchor_label: String,
    pub pair_label: String,
    /// Weight on the anchor, in [0, 1].
    pub alpha: f64,
}

impl MergeSpec {
    pub fn new(anchor_label: impl Into<String>, pair_label: impl Into<String>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Precondition(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(MergeSpec {
            anchor_label: anchor_label.into(),
            pair_label: pair_label.into(),
            alpha,
        })
    }
}

fn check_structure(anchor: &TensorArchive, pair: &TensorArchive) -> Result<()> {
    let mut problems = Vec::new();
    for name in anchor.tensors.keys() {
        if !pair.tensors.contains_key(name) {
            problems.push(format!("{name:?} missing from pair"));
        }
    }
    for name in pair.tensors.keys() {
        if !anchor.tensors.contains_key(name) {
            problems.push(format!("{name:?} missing from anchor"));
        }
    }
    for (name, a) in &anchor.tensors {
        if let Some(b) = pair.tensors.get(name) {
            if a.shape != b.shape {
                problems.push(format!("{name:?} shape {:?} vs {:?}", a.shape, b.shape));
            }
            if a.dtype != b.dtype {
                problems.push(format!("{name:?} dtype {:?} vs {:?}", a.dtype, b.dtype));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Structural(problems.join("; ")))
    }
}

/// Merges two structurally identical archives. The output metadata starts
/// from the anchor's and records both parents and the alpha.
pub fn merge_archives(
    anchor: &TensorArchive,
    pair: &TensorArchive,
    spec: &MergeSpec,
) -> Result<TensorArchive> {
    check_structure(anchor, pair)?;
    let alpha = spec.alpha as f32;

    let tensors: Vec<(String, Tensor)> = anchor
        .tensors
        .par_iter()
        .map(|(name, a)| {
            let b = &pair.tensors[name];
            let merged = if spec.alpha == 1.0 {
                a.clone()
            } else if spec.alpha == 0.0 {
                b.clone()
            } else {
                let left = a.to_f32_vec();
                let right = b.to_f32_vec();
                let mixed: Vec<f32> = left
                    .iter()
                    .zip(&right)
                    .map(|(&x, &y)| alpha * x + (1.0 - alpha) * y)
                    .collect();
                Tensor::from_f32(a.shape.clone(), &mixed)?
            };
            Ok((name.clone(), merged))
        })
        .collect::<Result<_>>()?;

    let mut metadata = anchor.metadata.clone();
    metadata.insert("merge.anchor".into(), spec.anchor_label.clone());
    metadata.insert("merge.pair".into(), spec.pair_label.clone());
    metadata.insert("merge.alpha".into(), format!("{}", spec.alpha));

    Ok(TensorArchive {
        tensors: tensors.into_iter().collect(),
        metadata,
    })
}

/// One checkpoint participating in a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRef {
    pub label: String,
    pub path: PathBuf,
}

/// The all-pairs sweep over a model set: every unordered pair once.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub models: Vec<ModelRef>,
    pub alpha: f64,
}

impl SweepPlan {
    pub fn new(models: Vec<ModelRef>, alpha: f64) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::Precondition(format!(
                "sweep needs at least 2 models, got {}",
                models.len()
            )));
        }
        let mut labels: Vec<&str> = models.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != models.len() {
            return Err(Error::Precondition("duplicate model labels in sweep".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Precondition(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(SweepPlan { models, alpha })
    }

    /// Index pairs (i, j) with i < j, in model-list order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.models.len();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        pairs
    }
}

/// Where one dataset's evaluation inputs live.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub name: String,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

/// Embedding files for one (pair, dataset, direction) evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingFiles {
    pub queries: PathBuf,
    pub docs: PathBuf,
}

/// External inputs of the sweep. Inference is out of process: an external
/// embedding step fills in embedding files per merged pair, keyed
/// `"{anchor}+{pair}"` in model-list order, then per dataset name, then per
/// direction text form.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct EvalManifest {
    #[serde(default)]
    pub datasets: Vec<DatasetFiles>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, BTreeMap<String, BTreeMap<String, EmbeddingFiles>>>,
    /// Optional per-model mono-lingual scores used to orient each pair so
    /// the better mono-lingual parent is the anchor.
    #[serde(default)]
    pub mono_scores: BTreeMap<String, f64>,
}

/// The four per-direction averages of one evaluated cell, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAverages {
    #[serde(rename = "en-ko")]
    pub en_ko: f64,
    #[serde(rename = "ko-en")]
    pub ko_en: f64,
    #[serde(rename = "ko-ko")]
    pub ko_ko: f64,
    #[serde(rename = "en-en")]
    pub en_en: f64,
}

/// One sweep cell: a merged pair with its scores, or the error that
/// aborted just this cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub anchor: String,
    pub pair: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<DirectionAverages>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub alpha: f64,
    pub cells: Vec<SweepCell>,
}

/// Picks the anchor by the best mono-lingual score; ties go to the
/// lexicographically smaller label so the choice is reproducible.
pub fn select_anchor<'a>(mono_scores: impl IntoIterator<Item = (&'a str, f64)>) -> Option<&'a str> {
    mono_scores
        .into_iter()
        .max_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("scores are finite")
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(label, _)| label)
}

/// Runs the sweep: merges every pair, optionally writes each merged
/// archive, and evaluates cells the manifest provides embeddings for. A
/// failing cell records its error and the sweep continues.
pub fn run_sweep(
    plan: &SweepPlan,
    manifest: Option<&EvalManifest>,
    merge_dir: Option<&Path>,
) -> Result<SweepReport> {
    if let Some(dir) = merge_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut archives: Vec<Option<TensorArchive>> = vec![None; plan.models.len()];
    let mut cells = Vec::new();
    for (i, j) in plan.pairs() {
        let cell_key = format!("{}+{}", plan.models[i].label, plan.models[j].label);
        // Anchor orientation: better mono-lingual parent first when known.
        let (anchor_idx, pair_idx) = match manifest.map(|m| &m.mono_scores) {
            Some(scores) if !scores.is_empty() => {
                let score = |idx: usize| scores.get(&plan.models[idx].label).copied();
                match (score(i), score(j)) {
                    (Some(a), Some(b)) => {
                        let labels = [
                            (plan.models[i].label.as_str(), a),
                            (plan.models[j].label.as_str(), b),
                        ];
                        if select_anchor(labels) == Some(plan.models[j].label.as_str()) {
                            (j, i)
                        } else {
                            (i, j)
                        }
                    }
                    _ => (i, j),
                }
            }
            _ => (i, j),
        };
        let cell = build_cell(
            plan,
            &mut archives,
            anchor_idx,
            pair_idx,
            &cell_key,
            manifest,
            merge_dir,
        );
        cells.push(cell);
    }
    Ok(SweepReport {
        alpha: plan.alpha,
        cells,
    })
}

fn build_cell(
    plan: &SweepPlan,
    archives: &mut [Option<TensorArchive>],
    anchor_idx: usize,
    pair_idx: usize,
    cell_key: &str,
    manifest: Option<&EvalManifest>,
    merge_dir: Option<&Path>,
) -> SweepCell {
    let anchor_label = plan.models[anchor_idx].label.clone();
    let pair_label = plan.models[pair_idx].label.clone();
    let mut cell = SweepCell {
        anchor: anchor_label.clone(),
        pair: pair_label.clone(),
        merged_path: None,
        scores: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        for idx in [anchor_idx, pair_idx] {
            if archives[idx].is_none() {
                archives[idx] = Some(read_tensor_archive(&plan.models[idx].path)?);
            }
        }
        let spec = MergeSpec::new(&anchor_label, &pair_label, plan.alpha)?;
        let merged = merge_archives(
            archives[anchor_idx].as_ref().unwrap(),
            archives[pair_idx].as_ref().unwrap(),
            &spec,
        )?;
        if let Some(dir) = merge_dir {
            let path = dir.join(format!("{cell_key}.tensors"));
            write_tensor_archive(&merged, &path)?;
            cell.merged_path = Some(path);
        }
        if let Some(manifest) = manifest {
            if let Some(cell_embeddings) = manifest.embeddings.get(cell_key) {
                cell.scores = Some(evaluate_cell(manifest, cell_embeddings)?);
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        cell.error = Some(e.to_string());
    }
    cell
}

fn evaluate_cell(
    manifest: &EvalManifest,
    cell_embeddings: &BTreeMap<String, BTreeMap<String, EmbeddingFiles>>,
) -> Result<DirectionAverages> {
    let mut by_direction: BTreeMap<TaskDirection, Vec<f64>> = BTreeMap::new();
    for direction in TaskDirection::all() {
        for dataset in &manifest.datasets {
            let files = cell_embeddings
                .get(&dataset.name)
                .and_then(|m| m.get(&direction.render()))
                .ok_or_else(|| {
                    Error::Precondition(format!(
                        "manifest has no embeddings for dataset {:?} direction {}",
                        dataset.name, direction
                    ))
                })?;
            let task = EvalTask::new(
                dataset.name.clone(),
                direction,
                read_queries(&dataset.queries)?,
                read_corpus(&dataset.corpus)?,
                read_qrels(&dataset.qrels)?,
            )?;
            let result = run_task(
                &task,
                &read_embeddings(&files.queries)?,
                &read_embeddings(&files.docs)?,
                10,
            )?;
            by_direction.entry(direction).or_default().push(result.mean_percent());
        }
    }
    let avg = |direction: &str| -> f64 {
        let scores = &by_direction[&crate::domain::parse_direction(direction).unwrap()];
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(DirectionAverages {
        en_ko: avg("en-ko"),
        ko_en: avg("ko-en"),
        ko_ko: avg("ko-ko"),
        en_en: avg("en-en"),
    })
}
