//! Retrieval evaluation: rank a parallel document pool for each query by
//! cosine similarity and score NDCG@k against graded relevance judgments.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::TaskDirection;
use crate::error::{Error, Result};
use crate::ingest::emb1::EmbeddingMatrix;
use crate::ingest::{ParallelCorpus, Qrels, QueryRecord};
use crate::miner::rank_documents;

/// One evaluation task: a named dataset, a direction, its queries and the
/// parallel pool the direction's document side is drawn from.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub dataset_name: String,
    pub direction: TaskDirection,
    pub queries: Vec<QueryRecord>,
    pub doc_pool: ParallelCorpus,
    pub qrels: Qrels,
}

impl EvalTask {
    /// Builds a task, rejecting construction errors up front: queries
    /// without judgments, or judged-relevant documents absent from the
    /// pool, are errors rather than silently skipped queries.
    pub fn new(
        dataset_name: impl Into<String>,
        direction: TaskDirection,
        queries: Vec<QueryRecord>,
        doc_pool: ParallelCorpus,
        qrels: Qrels,
    ) -> Result<Self> {
        qrels.validate()?;
        if queries.is_empty() {
            return Err(Error::Precondition("evaluation task with no queries".into()));
        }
        for query in &queries {
            let judged = qrels.for_query(&query.query_id).ok_or_else(|| {
                Error::Precondition(format!(
                    "query {:?} has no relevance judgments",
                    query.query_id
                ))
            })?;
            let relevant_in_pool = judged
                .iter()
                .any(|(doc_id, &rel)| rel >= 1 && doc_pool.doc(doc_id).is_some());
            if !relevant_in_pool {
                return Err(Error::Precondition(format!(
                    "query {:?} has no relevant document in the pool",
                    query.query_id
                )));
            }
        }
        Ok(EvalTask {
            dataset_name: dataset_name.into(),
            direction,
            queries,
            doc_pool,
            qrels,
        })
    }
}

/// Scores for one (dataset, direction) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset_name: String,
    pub direction: TaskDirection,
    pub k: usize,
    /// Arithmetic mean of the per-query values, in [0, 1].
    pub mean_ndcg: f64,
    pub per_query_ndcg: BTreeMap<String, f64>,
}

impl EvalResult {
    /// The mean scaled to the percent form used in reports.
    pub fn mean_percent(&self) -> f64 {
        self.mean_ndcg * 100.0
    }
}

/// The on-disk result schema: the mean is carried both raw and in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResultFile {
    pub dataset: String,
    pub direction: TaskDirection,
    pub k: usize,
    pub mean_ndcg: f64,
    pub mean_ndcg_pct: f64,
    pub per_query: BTreeMap<String, f64>,
}

impl EvalResultFile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mean_ndcg) {
            return Err(Error::Precondition(format!(
                "mean_ndcg {} outside [0, 1]",
                self.mean_ndcg
            )));
        }
        if (self.mean_ndcg * 100.0 - self.mean_ndcg_pct).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "mean_ndcg_pct {} does not match mean_ndcg {}",
                self.mean_ndcg_pct, self.mean_ndcg
            )));
        }
        Ok(())
    }
}

impl From<EvalResult> for EvalResultFile {
    fn from(result: EvalResult) -> Self {
        EvalResultFile {
            dataset: result.dataset_name,
            direction: result.direction,
            k: result.k,
            mean_ndcg: result.mean_ndcg,
            mean_ndcg_pct: result.mean_ndcg * 100.0,
            per_query: result.per_query_ndcg,
        }
    }
}

/// NDCG@k with graded gains (2^rel - 1) and a log2(i + 1) discount. With a
/// single binary gold this reduces to 1/log2(rank + 1) when the gold ranks
/// within k, else 0.
pub fn ndcg_at_k(ranked: &[String], qrels_for_query: &BTreeMap<String, u32>, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let mut gains: Vec<u32> = qrels_for_query.values().copied().filter(|&r| r > 0).collect();
    if gains.is_empty() {
        return Err(Error::Precondition(
            "qrels for query have no positive relevance".into(),
        ));
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }

    let discount = |position: usize| ((position + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc_id)| {
            let rel = qrels_for_query.get(doc_id).copied().unwrap_or(0);
            (2f64.powi(rel as i32) - 1.0) / discount(i + 1)
        })
        .sum();

    gains.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / discount(i + 1))
        .sum();

    Ok(dcg / idcg)
}

/// Runs one task: ranks the full pool for every query and averages NDCG@k.
/// Query embeddings are looked up under the direction's query language,
/// document embeddings under its document language; the caller supplies
/// matrices for the matching sides.
pub fn run_task(
    task: &EvalTask,
    query_embs: &EmbeddingMatrix,
    doc_embs: &EmbeddingMatrix,
    k: usize,
) -> Result<EvalResult> {
    if query_embs.dim() != doc_embs.dim() {
        return Err(Error::Precondition(format!(
            "query dimension {} does not match document dimension {}",
            query_embs.dim(),
            doc_embs.dim()
        )));
    }
    for doc in &task.doc_pool.docs {
        if doc_embs.index_of(&doc.doc_id).is_none() {
            return Err(Error::Precondition(format!(
                "missing document embedding for {:?}",
                doc.doc_id
            )));
        }
    }
    // Restrict the ranked pool to the task's documents, in corpus order.
    let pool_ids: Vec<String> = task.doc_pool.docs.iter().map(|d| d.doc_id.clone()).collect();
    let mut pool_vectors = Vec::with_capacity(pool_ids.len() * doc_embs.dim());
    for id in &pool_ids {
        pool_vectors.extend_from_slice(doc_embs.vector_for(id).expect("checked above"));
    }
    let pool = EmbeddingMatrix::new(pool_ids, pool_vectors, doc_embs.dim(), false)?;

    let per_query: Vec<(String, f64)> = task
        .queries
        .par_iter()
        .map(|query| {
            let query_vec = query_embs.vector_for(&query.query_id).ok_or_else(|| {
                Error::Precondition(format!(
                    "missing query embedding for {:?}",
                    query.query_id
                ))
            })?;
            let ranked = rank_documents(query_vec, &pool)?;
            let ranked_ids: Vec<String> = ranked.into_iter().map(|d| d.doc_id).collect();
            let judged = task
                .qrels
                .for_query(&query.query_id)
                .expect("validated at construction");
            let ndcg = ndcg_at_k(&ranked_ids, judged, k)?;
            Ok((query.query_id.clone(), ndcg))
        })
        .collect::<Result<_>>()?;

    let mean_ndcg = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
    Ok(EvalResult {
        dataset_name: task.dataset_name.clone(),
        direction: task.direction,
        k,
        mean_ndcg,
        per_query_ndcg: per_query.into_iter().collect(),
    })
}
