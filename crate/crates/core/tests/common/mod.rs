#![allow(dead_code)]

use casper::{EmbeddingTable, LoadOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TOY: &str = "a 1.0 0.0\nb 0.0 1.0\nc -1.0 0.0\n";

pub fn toy() -> EmbeddingTable {
    EmbeddingTable::load(TOY.as_bytes(), LoadOptions::default()).unwrap()
}

pub fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let row = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            (format!("t{i}"), row)
        })
        .collect()
}

pub fn gaussian_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    EmbeddingTable::from_rows(gaussian_rows(n, dim, seed), false).unwrap()
}

/// `count` sentences of 1..=max_len tokens drawn uniformly from the table.
pub fn random_sentences(table: &EmbeddingTable, count: usize, max_len: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len)
                .map(|_| table.tokens()[rng.random_range(0..table.len())].clone())
                .collect()
        })
        .collect()
}

/// Exhaustive cosine ranking, ascending by distance then id.
pub fn brute_force(table: &EmbeddingTable, query: &[f64], k: usize, exclude: &[u32]) -> Vec<(u32, f64)> {
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut all: Vec<(u32, f64)> = (0..table.len() as u32)
        .filter(|i| !exclude.contains(i))
        .map(|i| {
            let row = table.row(casper::TokenId(i));
            let rn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = row.iter().zip(query).map(|(a, b)| a * b).sum();
            let d = if rn == 0.0 { 1.0 } else { 1.0 - dot / (qn * rn) };
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn strings(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}
