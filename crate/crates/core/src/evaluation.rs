//! Raw and filtered link-prediction ranking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{KnowledgeGraph, Split, Triple};
use crate::error::{Error, Result};
use crate::models::EmbeddingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub rank_head: usize,
    pub rank_tail: usize,
    pub filtered: bool,
}

/// Aggregates over both query directions of every evaluated triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_triples: usize,
    #[serde(skip)]
    pub filtered: bool,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[RankResult], filtered: bool) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty rank list"));
        }
        let n = 2.0 * ranks.len() as f64;
        let (mut mr, mut mrr) = (0.0, 0.0);
        let mut hits = [0usize; 3];
        for r in ranks {
            for rank in [r.rank_head, r.rank_tail] {
                mr += rank as f64;
                mrr += 1.0 / rank as f64;
                for (h, k) in hits.iter_mut().zip([1, 3, 10]) {
                    *h += (rank <= k) as usize;
                }
            }
        }
        Ok(MetricsReport {
            mr: mr / n,
            mrr: mrr / n,
            hits1: hits[0] as f64 / n,
            hits3: hits[1] as f64 / n,
            hits10: hits[2] as f64 / n,
            n_triples: ranks.len(),
            filtered,
        })
    }

    pub fn hits(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits1),
            3 => Some(self.hits3),
            10 => Some(self.hits10),
            _ => None,
        }
    }
}

/// `1 + |{e ≠ gold : s[e] ≥ s[gold]}|`, not counting entities in `excluded`
/// (which must not contain `gold`). Ties count against the gold entity.
fn rank_from_scores(scores: &[f64], gold: usize, excluded: &[usize]) -> usize {
    let target = scores[gold];
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| e != gold && s >= target)
        .count();
    let removed = excluded.iter().filter(|&&e| e != gold && scores[e] >= target).count();
    1 + above - removed
}

pub fn rank_triple(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    triple: &Triple,
    filtered: bool,
) -> Result<RankResult> {
    kg.check_triple(triple)?;
    let Triple { head, relation, tail } = *triple;
    let head_scores = model.score_all_heads(relation, tail)?;
    let tail_scores = model.score_all_tails(head, relation)?;
    let index = kg.filter_index();
    let (ex_heads, ex_tails): (&[usize], &[usize]) = if filtered {
        (index.heads(relation, tail), index.tails(head, relation))
    } else {
        (&[], &[])
    };
    Ok(RankResult {
        rank_head: rank_from_scores(&head_scores, head, ex_heads),
        rank_tail: rank_from_scores(&tail_scores, tail, ex_tails),
        filtered,
    })
}

/// Ranks computed in parallel, returned in input order.
pub fn rank_triples(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    filtered: bool,
) -> Result<Vec<RankResult>> {
    triples
        .par_iter()
        .map(|t| rank_triple(model, kg, t, filtered))
        .collect()
}

pub fn evaluate_triples(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    filtered: bool,
) -> Result<MetricsReport> {
    if triples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let ranks = rank_triples(model, kg, triples, filtered)?;
    MetricsReport::from_ranks(&ranks, filtered)
}

pub fn evaluate(
    model: &EmbeddingModel,
    kg: &KnowledgeGraph,
    split: Split,
    filtered: bool,
) -> Result<MetricsReport> {
    evaluate_triples(model, kg, kg.split(split), filtered)
}
