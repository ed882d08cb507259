//! Hard-negative mining over a precomputed embedding matrix: rank the
//! document pool by cosine similarity, take a 1-indexed rank window, then
//! apply an absolute similarity cap and a relative margin against the
//! query's own positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Language, Triple};
use crate::error::{Error, Result};
use crate::ingest::emb1::EmbeddingMatrix;

/// Mining filters. Defaults follow the documented mining recipe: candidate
/// ranks 50..=300, similarity cap 0.8, relative margin 0.95, 5 negatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningConfig {
    /// First candidate rank, 1-indexed inclusive.
    pub rank_lo: usize,
    /// Last candidate rank, 1-indexed inclusive.
    pub rank_hi: usize,
    /// Keep a candidate only if its similarity does not exceed this cap.
    pub abs_cap: f64,
    /// Keep a candidate only if its similarity is strictly below
    /// `rel_margin * sim(query, positive)`.
    pub rel_margin: f64,
    /// Number of negatives to mine per query.
    pub count: usize,
    /// When set, the query's own positive stays in the ranking (shifting
    /// rank indices) but is still never mined.
    pub include_own_positive: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            rank_lo: 50,
            rank_hi: 300,
            abs_cap: 0.8,
            rel_margin: 0.95,
            count: 5,
            include_own_positive: false,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank_lo < 1 || self.rank_lo > self.rank_hi {
            return Err(Error::Precondition(format!(
                "rank window [{}, {}] must satisfy 1 <= lo <= hi",
                self.rank_lo, self.rank_hi
            )));
        }
        if !(self.rel_margin > 0.0 && self.rel_margin <= 1.0) {
            return Err(Error::Precondition(format!(
                "rel_margin must be in (0, 1], got {}",
                self.rel_margin
            )));
        }
        if self.count < 1 {
            return Err(Error::Precondition("count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One pool document with its similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub similarity: f64,
}

/// Per-filter rejection tallies over the ranked pool.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub out_of_window: usize,
    pub abs_cap: usize,
    pub rel_margin: usize,
}

/// Outcome of mining one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    pub query_id: String,
    /// Mined ids in descending similarity order.
    pub mined: Vec<String>,
    /// How many of the requested `count` could not be filled.
    pub shortfall: usize,
    pub rejected: RejectionCounts,
    /// Set when the pool is too small for the rank window to start.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub warning: bool,
}

/// Cosine similarity accumulated in f64 so ranking is reproducible
/// regardless of how the inputs were normalized.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::Precondition("zero-norm vector in similarity".into()));
    }
    let sim = dot / (norm_a.sqrt() * norm_b.sqrt());
    if !sim.is_finite() {
        return Err(Error::Precondition("non-finite similarity; corrupt embeddings".into()));
    }
    Ok(sim)
}

/// Ranks the whole pool by descending cosine similarity to the query, ties
/// broken by ascending doc id.
pub fn rank_documents(query_vec: &[f32], docs: &EmbeddingMatrix) -> Result<Vec<RankedDoc>> {
    if query_vec.len() != docs.dim() {
        return Err(Error::Precondition(format!(
            "query dimension {} does not match document dimension {}",
            query_vec.len(),
            docs.dim()
        )));
    }
    let mut ranked: Vec<RankedDoc> = docs
        .ids()
        .iter()
        .zip(docs.rows())
        .map(|(doc_id, row)| {
            Ok(RankedDoc {
                doc_id: doc_id.clone(),
                similarity: cosine_similarity(query_vec, row)?,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    Ok(ranked)
}

/// Mines up to `cfg.count` negatives for one query.
pub fn mine_negatives(
    query_id: &str,
    query_vec: &[f32],
    positive_doc_id: &str,
    docs: &EmbeddingMatrix,
    cfg: &MiningConfig,
) -> Result<MiningResult> {
    cfg.validate()?;
    let ranked = rank_documents(query_vec, docs)?;
    let positive_sim = ranked
        .iter()
        .find(|d| d.doc_id == positive_doc_id)
        .map(|d| d.similarity)
        .ok_or_else(|| {
            Error::Precondition(format!(
                "positive document {positive_doc_id:?} not present in the pool"
            ))
        })?;

    let ranking: Vec<&RankedDoc> = if cfg.include_own_positive {
        ranked.iter().collect()
    } else {
        ranked.iter().filter(|d| d.doc_id != positive_doc_id).collect()
    };

    let window_start = cfg.rank_lo - 1;
    let window_end = cfg.rank_hi.min(ranking.len());
    let warning = ranking.len() < cfg.rank_lo;
    let window = if warning { &[][..] } else { &ranking[window_start..window_end] };

    let mut rejected = RejectionCounts::default();
    let rel_bound = cfg.rel_margin * positive_sim;
    let mut mined = Vec::with_capacity(cfg.count);
    for doc in window {
        if doc.doc_id == positive_doc_id {
            continue; // only reachable with include_own_positive
        }
        if doc.similarity > cfg.abs_cap {
            rejected.abs_cap += 1;
        } else if doc.similarity >= rel_bound {
            rejected.rel_margin += 1;
        } else if mined.len() < cfg.count {
            mined.push(doc.doc_id.clone());
        }
    }
    let in_window_candidates = window.iter().filter(|d| d.doc_id != positive_doc_id).count();
    let pool_candidates = ranking.iter().filter(|d| d.doc_id != positive_doc_id).count();
    rejected.out_of_window = pool_candidates - in_window_candidates;

    let shortfall = cfg.count - mined.len();
    Ok(MiningResult {
        query_id: query_id.to_string(),
        mined,
        shortfall,
        rejected,
        warning,
    })
}

/// Prepends the triple's own synthetic negative to the mined negatives,
/// resolving mined ids to `lang`-side texts. Mined texts equal to the
/// positive are dropped with a warning.
pub fn assemble_negatives(
    triple: &Triple,
    lang: Language,
    mined: &MiningResult,
    corpus_texts: &BTreeMap<String, String>,
) -> Result<Vec<String>> {
    let positive_text = triple.positive.get(lang);
    let mut negatives = vec![triple.synthetic_negative.get(lang).to_string()];
    for doc_id in &mined.mined {
        let text = corpus_texts.get(doc_id).ok_or_else(|| {
            Error::Precondition(format!(
                "mined document {doc_id:?} not resolvable in the corpus"
            ))
        })?;
        if text == positive_text {
            log::warn!(
                "query {:?}: mined doc {doc_id:?} duplicates the positive text; dropped",
                mined.query_id
            );
            continue;
        }
        negatives.push(text.clone());
    }
    Ok(negatives)
}
