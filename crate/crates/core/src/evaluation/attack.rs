//! Nearest-neighbor reconstruction attack.
//!
//! For every sanitized position the attacker ranks the vocabulary by cosine
//! distance to the replacement's embedding and succeeds when the original
//! token is among the top `k`. The replacement itself is a candidate, so
//! unchanged tokens are always recovered.

use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::SentenceRecord;
use crate::embeddings::{EmbeddingTable, Query, TokenId};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub k: usize,
    pub attempts: usize,
    pub hits: usize,
    pub pr_at_k: f64,
    /// `(k', success rate within the top k')` for `k' = 1..=k`.
    pub per_k_curve: Vec<(usize, f64)>,
    /// Evaluated positions whose tokens were not in the table.
    pub unresolved: usize,
}

const QUERY_BATCH: usize = 4096;

/// Runs the top-`k` attack over every evaluated position of `records`.
pub fn attack_pr_at_k<'r>(
    records: impl IntoIterator<Item = &'r SentenceRecord>,
    table: &EmbeddingTable,
    k: usize,
    exec: Exec,
) -> Result<AttackReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("attack k must be at least 1".into()));
    }
    let mut pairs: Vec<(TokenId, TokenId)> = Vec::new();
    let mut unresolved = 0;
    for record in records {
        for i in 0..record.len() {
            if !record.evaluated(i) {
                continue;
            }
            match (
                table.id(&record.original_tokens[i]),
                table.id(&record.sanitized_tokens[i]),
            ) {
                (Some(o), Some(r)) => pairs.push((o, r)),
                _ => unresolved += 1,
            }
        }
    }
    if unresolved > 0 {
        log::warn!("{unresolved} evaluated positions could not be resolved against the table");
    }

    // One ranking per distinct replacement token.
    let mut distinct: Vec<TokenId> = pairs.iter().map(|&(_, r)| r).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut ranked: HashMap<TokenId, Vec<TokenId>> = HashMap::with_capacity(distinct.len());
    for chunk in distinct.chunks(QUERY_BATCH) {
        let queries: Vec<Query<'_>> = chunk.iter().map(|&r| Query::new(table.row(r), &[])).collect();
        for (&r, result) in chunk.iter().zip(table.nearest_batch(&queries, k, exec)) {
            let ids = match result {
                Ok(nbs) => nbs.into_iter().map(|n| n.id).collect(),
                // An all-zero replacement row cannot be ranked: nothing is recovered.
                Err(Error::ZeroQuery) => Vec::new(),
                Err(e) => return Err(e),
            };
            ranked.insert(r, ids);
        }
    }

    let mut hits_at = vec![0usize; k];
    for (o, r) in &pairs {
        if let Some(rank) = ranked[r].iter().position(|id| id == o) {
            hits_at[rank] += 1;
        }
    }
    let attempts = pairs.len();
    let rate = |h: usize| if attempts == 0 { 0.0 } else { h as f64 / attempts as f64 };
    let mut per_k_curve = Vec::with_capacity(k);
    let mut cumulative = 0;
    for (i, h) in hits_at.iter().enumerate() {
        cumulative += h;
        per_k_curve.push((i + 1, rate(cumulative)));
    }
    Ok(AttackReport {
        k,
        attempts,
        hits: cumulative,
        pr_at_k: rate(cumulative),
        per_k_curve,
        unresolved,
    })
}
