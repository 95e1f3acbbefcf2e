use rayon::prelude::*;

use super::CliError;
use crate::evalmetrics::LabeledRanking;
use crate::index::{EmbeddingRecord, PlanIndex};
use crate::models::Model;
use crate::training::{embed_dataset, Embeddings};
use crate::volumes::{prepare_case, GeneratedCase, PrepConfig, PreparedCase, Split};

pub fn prepare_all(cases: &[GeneratedCase], prep: &PrepConfig) -> Result<Vec<PreparedCase>, CliError> {
    Ok(cases
        .par_iter()
        .map(|c| prepare_case(&c.volume, &c.meta, prep))
        .collect::<Result<_, _>>()?)
}

pub fn of_split(cases: &[PreparedCase], split: Split) -> Vec<PreparedCase> {
    cases.iter().filter(|c| c.meta.split == split).cloned().collect()
}

/// Embeds `cases` and stores them as index records. `dose_ref` names the
/// dose volume a hit points back to.
pub fn build_index(
    model: &Model,
    cases: &[PreparedCase],
    threads: usize,
    dose_ref: impl Fn(&str) -> String,
) -> Result<PlanIndex, CliError> {
    let emb = embed_dataset(model, cases, threads)?;
    let mut index = PlanIndex::new(emb.dim);
    for (i, c) in cases.iter().enumerate() {
        index.insert(EmbeddingRecord {
            case_id: c.meta.case_id.clone(),
            vector: emb.row(i).to_vec(),
            meta: c.meta.clone(),
            dose_ref: dose_ref(&c.meta.case_id),
        })?;
    }
    Ok(index)
}

/// Ranks every query against the unfiltered index and keeps the retrieved
/// class ids down to depth `k`.
pub fn rank_queries(
    model: &Model,
    index: &PlanIndex,
    queries: &[PreparedCase],
    k: usize,
    threads: usize,
) -> Result<Vec<LabeledRanking>, CliError> {
    let emb = embed_dataset(model, queries, threads)?;
    rank_embeddings(index, &emb, queries, k)
}

/// As [`rank_queries`] with the query embeddings already computed.
pub fn rank_embeddings(
    index: &PlanIndex,
    emb: &Embeddings,
    queries: &[PreparedCase],
    k: usize,
) -> Result<Vec<LabeledRanking>, CliError> {
    if emb.len() != queries.len() {
        return Err(CliError::Data(format!(
            "{} embeddings for {} queries",
            emb.len(),
            queries.len()
        )));
    }
    let view = index.view();
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let res = view.query(emb.row(i), k)?;
            Ok(LabeledRanking {
                true_class: q.meta.class_id,
                retrieved: res.hits.iter().map(|h| h.class_id).collect(),
            })
        })
        .collect()
}
