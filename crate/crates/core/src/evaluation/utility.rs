use serde::Serialize;

use crate::corpus::SentenceRecord;
use crate::embeddings::EmbeddingTable;

/// Desk-scale utility proxies over sanitized records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtilityReport {
    /// Positions the mechanism ran on.
    pub evaluated: usize,
    pub preserved: usize,
    pub preservation_rate: f64,
    pub changed: usize,
    /// Mean cosine similarity between original and replacement over changed
    /// positions; 1.0 when nothing changed.
    pub mean_cosine_similarity: f64,
}

pub fn utility_report<'r>(
    records: impl IntoIterator<Item = &'r SentenceRecord>,
    table: &EmbeddingTable,
) -> UtilityReport {
    let mut evaluated = 0;
    let mut preserved = 0;
    let mut cosine_sum = 0.0;
    let mut cosine_n = 0;
    for record in records {
        for i in (0..record.len()).filter(|&i| record.evaluated(i)) {
            evaluated += 1;
            let (orig, repl) = (&record.original_tokens[i], &record.sanitized_tokens[i]);
            if orig == repl {
                preserved += 1;
            } else if let (Some(a), Some(b)) = (table.id(orig), table.id(repl)) {
                cosine_sum += 1.0 - table.cosine_distance(table.row(a), b);
                cosine_n += 1;
            }
        }
    }
    UtilityReport {
        evaluated,
        preserved,
        preservation_rate: if evaluated == 0 {
            1.0
        } else {
            preserved as f64 / evaluated as f64
        },
        changed: evaluated - preserved,
        mean_cosine_similarity: if cosine_n == 0 {
            1.0
        } else {
            cosine_sum / cosine_n as f64
        },
    }
}
