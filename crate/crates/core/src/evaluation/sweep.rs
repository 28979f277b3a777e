//! Grid sweep over `(sigma, window, eta)`.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{RecordId, SentenceRecord, StopwordSet};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{attack_pr_at_k, utility_report};
use crate::mechanisms::{MechanismConfig, Sanitizer};
use crate::par::{self, Exec};
use crate::rng::derive_seed;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepGrid {
    pub sigmas: Vec<f64>,
    pub windows: Vec<usize>,
    pub etas: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::with_capacity(self.sigmas.len() * self.windows.len() * self.etas.len());
        for &sigma in &self.sigmas {
            for &window in &self.windows {
                for &eta in &self.etas {
                    out.push((sigma, window, eta));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub window: usize,
    pub eta: f64,
    pub seed: u64,
    pub pr_at_k: Option<f64>,
    pub preservation: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub runtime_ms: u128,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

/// Seed for one grid cell; depends only on the master seed and the cell.
pub fn cell_seed(master: u64, sigma: f64, window: usize, eta: f64) -> u64 {
    derive_seed(master, &[sigma.to_bits(), window as u64, eta.to_bits()])
}

/// Runs the template mechanism at every grid point over `sentences`.
///
/// The template supplies the mechanism kind and flags; sigma, window, eta and
/// seed are set per cell. Cells run in parallel, each sanitizing its sentences
/// sequentially.
#[allow(clippy::too_many_arguments)]
pub fn parameter_sweep(
    grid: &SweepGrid,
    template: &MechanismConfig,
    sentences: &[(RecordId, Vec<String>)],
    table: &EmbeddingTable,
    stopwords: &StopwordSet,
    k: usize,
    master_seed: u64,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    Ok(par::map_slice(exec, &cells, |&(sigma, window, eta)| {
        let seed = cell_seed(master_seed, sigma, window, eta);
        let start = Instant::now();
        let outcome = run_cell(template, sigma, window, eta, seed, sentences, table, stopwords, k);
        let runtime_ms = start.elapsed().as_millis();
        match outcome {
            Ok((pr, preservation, cosine)) => SweepRow {
                sigma,
                window,
                eta,
                seed,
                pr_at_k: Some(pr),
                preservation: Some(preservation),
                mean_cosine: Some(cosine),
                runtime_ms,
                status: "ok".into(),
            },
            Err(e) => SweepRow {
                sigma,
                window,
                eta,
                seed,
                pr_at_k: None,
                preservation: None,
                mean_cosine: None,
                runtime_ms,
                status: format!("failed: {e}"),
            },
        }
    }))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    template: &MechanismConfig,
    sigma: f64,
    window: usize,
    eta: f64,
    seed: u64,
    sentences: &[(RecordId, Vec<String>)],
    table: &EmbeddingTable,
    stopwords: &StopwordSet,
    k: usize,
) -> Result<(f64, f64, f64)> {
    let config = MechanismConfig {
        sigma: Some(sigma),
        window: Some(window),
        eta: Some(eta),
        seed,
        ..template.clone()
    };
    let sanitizer = Sanitizer::new(table, &config, stopwords)?.with_exec(Exec::Sequential);
    let tokens: Vec<&[String]> = sentences.iter().map(|(_, t)| t.as_slice()).collect();
    let streams: Vec<u64> = (0..sentences.len() as u64).collect();
    let mut records = Vec::with_capacity(sentences.len());
    for ((id, _), result) in sentences.iter().zip(sanitizer.sanitize_batch(&tokens, &streams)) {
        records.push(SentenceRecord::from_tokens(id.clone(), &result?));
    }
    let attack = attack_pr_at_k(&records, table, k, Exec::Sequential)?;
    let utility = utility_report(&records, table);
    Ok((
        attack.pr_at_k,
        utility.preservation_rate,
        utility.mean_cosine_similarity,
    ))
}

/// Writes rows as RFC 4180 CSV with a header.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sigma",
        "window",
        "eta",
        "seed",
        "pr_at_k",
        "preservation",
        "mean_cosine",
        "runtime_ms",
        "status",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.sigma.to_string(),
            r.window.to_string(),
            r.eta.to_string(),
            r.seed.to_string(),
            opt(r.pr_at_k),
            opt(r.preservation),
            opt(r.mean_cosine),
            r.runtime_ms.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
