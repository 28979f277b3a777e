//! Monte-Carlo audit of the metric-DP guarantee.
//!
//! The mechanism is run many times on two inputs `x` and `x'`. For every
//! output seen often enough under both, the log ratio of the empirical
//! probabilities is compared with `2 * epsilon * d(x, x')`.
//!
//! Noise is drawn independently per position, so positions whose query does
//! not depend on any differing input token have the same output law under
//! both inputs and cancel from the ratio. Outputs are therefore tallied on the
//! affected positions only, which keeps the number of distinct outcomes small
//! enough to estimate even for long inputs.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::corpus::StopwordSet;
use crate::embeddings::{l2_norm, EmbeddingTable, TokenId};
use crate::error::{Error, Result};
use crate::mechanisms::{MechanismConfig, MechanismKind, Sanitizer};
use crate::par::{self, Exec};
use crate::rng::{derive_seed, RngState};
use crate::stencil::window_offsets;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMetric {
    /// Sum of Euclidean distances between aligned embeddings.
    #[default]
    Euclidean,
    /// Sum of cosine distances between aligned embeddings.
    Cosine,
}

impl std::str::FromStr for AuditMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "d2" => Ok(AuditMetric::Euclidean),
            "cosine" | "dc" => Ok(AuditMetric::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown audit metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub epsilon: f64,
    pub trials: u64,
    pub min_support: u64,
    pub metric: AuditMetric,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            trials: 1_000_000,
            min_support: 1000,
            metric: AuditMetric::Euclidean,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputCount {
    /// Tokens at the audited positions.
    pub output: Vec<String>,
    pub count_x: u64,
    pub count_x_prime: u64,
    /// Present when both counts reach the minimum support.
    pub log_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub mechanism: MechanismKind,
    pub metric: AuditMetric,
    pub epsilon: f64,
    pub x: Vec<String>,
    pub x_prime: Vec<String>,
    /// Positions whose output law can differ between the inputs.
    pub positions: Vec<usize>,
    pub distance_d2: f64,
    pub distance_dc: f64,
    pub trials: u64,
    pub min_support: u64,
    pub distinct_outputs: usize,
    pub supported_outputs: usize,
    /// Outputs with at least `min_support` hits under either input.
    pub output_counts: Vec<OutputCount>,
    /// Largest absolute log ratio over supported outputs.
    pub max_log_ratio: f64,
    /// `2 * epsilon * d` for the selected metric.
    pub bound: f64,
    /// Three standard errors of the noisiest supported log ratio.
    pub slack: f64,
    pub pass: bool,
    /// Tighter `epsilon * d` check, reported when every differing position
    /// lies in the sentence interior.
    pub interior_max_log_ratio: Option<f64>,
    pub interior_bound: Option<f64>,
    pub interior_pass: Option<bool>,
}

/// Sum of Euclidean and sum of cosine distances between aligned embeddings.
pub fn sequence_distances(table: &EmbeddingTable, x: &[TokenId], x_prime: &[TokenId]) -> (f64, f64) {
    let mut d2 = 0.0;
    let mut dc = 0.0;
    for (&a, &b) in x.iter().zip(x_prime) {
        if a == b {
            continue;
        }
        let diff: Vec<f64> = table.row(a).iter().zip(table.row(b)).map(|(p, q)| p - q).collect();
        d2 += l2_norm(&diff);
        dc += table.cosine_distance(table.row(a), b);
    }
    (d2, dc)
}

fn resolve(table: &EmbeddingTable, tokens: &[String]) -> Result<Vec<TokenId>> {
    tokens
        .iter()
        .map(|t| {
            table
                .id(t)
                .ok_or_else(|| Error::InvalidConfig(format!("audit token {t:?} is not in the table")))
        })
        .collect()
}

/// Positions whose mechanism output depends on some differing input position.
fn affected_positions(config: &MechanismConfig, n: usize, differing: &[usize]) -> Vec<usize> {
    if differing.is_empty() {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = match (config.kind.uses_context(), config.window) {
        (true, Some(window)) => differing
            .iter()
            .flat_map(|&j| window_offsets(window).map(move |o| j as i64 - o))
            .filter(|&i| i >= 0 && i < n as i64)
            .map(|i| i as usize)
            .collect(),
        _ => differing.to_vec(),
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// Whether every differing position sits where its contribution is exactly 1.
fn interior_applies(config: &MechanismConfig, n: usize, differing: &[usize]) -> bool {
    if differing.is_empty() {
        return false;
    }
    match config.kind {
        MechanismKind::Casper | MechanismKind::Convdef => {
            let window = config.window.unwrap_or(1);
            differing.iter().all(|&j| j >= window && j + window <= n)
        }
        _ => true,
    }
}

const TRIAL_BLOCK: u64 = 8192;

type Tally = HashMap<u64, (u64, u64)>;

pub fn dp_audit(
    config: &MechanismConfig,
    x: &[String],
    x_prime: &[String],
    table: &EmbeddingTable,
    options: &AuditOptions,
) -> Result<AuditReport> {
    if x.len() != x_prime.len() || x.is_empty() {
        return Err(Error::InvalidConfig(
            "audit inputs must be non-empty and of equal length".into(),
        ));
    }
    if options.trials == 0 {
        return Err(Error::InvalidConfig("audit needs at least one trial".into()));
    }
    let ids_x = resolve(table, x)?;
    let ids_xp = resolve(table, x_prime)?;
    let n = x.len();
    let differing: Vec<usize> = (0..n).filter(|&i| ids_x[i] != ids_xp[i]).collect();
    let positions = affected_positions(config, n, &differing);

    let base = table.len() as u64;
    if (base as f64).powi(positions.len() as i32) >= u64::MAX as f64 {
        return Err(Error::InvalidConfig(format!(
            "audit instance too large: {} tokens over {} positions",
            table.len(),
            positions.len()
        )));
    }

    let none = StopwordSet::empty();
    let sanitizer = Sanitizer::new(table, config, &none)?.with_exec(Exec::Sequential);
    let seed_x = derive_seed(options.seed, &[0]);
    let seed_xp = derive_seed(options.seed, &[1]);
    let opt_x: Vec<Option<TokenId>> = ids_x.iter().copied().map(Some).collect();
    let opt_xp: Vec<Option<TokenId>> = ids_xp.iter().copied().map(Some).collect();

    let run = |ids: &[Option<TokenId>], seed: u64, trial: u64| -> Result<u64> {
        let mut rng = RngState::new(seed, trial);
        let mut key = 0u64;
        for &i in positions.iter().rev() {
            let out = sanitizer.sanitize_position(ids, i, &mut rng).map_err(|e| e.at(i))?;
            key = key * base + out.0 as u64;
        }
        Ok(key)
    };

    let blocks = options.trials.div_ceil(TRIAL_BLOCK) as usize;
    let partials: Vec<Result<Tally>> = par::map_range(options.exec, blocks, |b| {
        let lo = b as u64 * TRIAL_BLOCK;
        let hi = (lo + TRIAL_BLOCK).min(options.trials);
        let mut tally = Tally::new();
        for t in lo..hi {
            tally.entry(run(&opt_x, seed_x, t)?).or_default().0 += 1;
            tally.entry(run(&opt_xp, seed_xp, t)?).or_default().1 += 1;
        }
        Ok(tally)
    });
    let mut counts: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for partial in partials {
        for (k, (a, b)) in partial? {
            let e = counts.entry(k).or_default();
            e.0 += a;
            e.1 += b;
        }
    }

    let decode = |mut key: u64| -> Vec<String> {
        positions
            .iter()
            .map(|_| {
                let id = TokenId((key % base) as u32);
                key /= base;
                table.token(id).to_string()
            })
            .collect()
    };

    let trials = options.trials as f64;
    let mut max_log_ratio = 0.0f64;
    let mut max_se = 0.0f64;
    let mut supported = 0;
    let mut output_counts = Vec::new();
    for (&key, &(cx, cxp)) in &counts {
        let log_ratio = if cx >= options.min_support && cxp >= options.min_support {
            let lr = (cx as f64 / cxp as f64).ln();
            let var = (1.0 / cx as f64 - 1.0 / trials) + (1.0 / cxp as f64 - 1.0 / trials);
            max_se = max_se.max(var.max(0.0).sqrt());
            max_log_ratio = max_log_ratio.max(lr.abs());
            supported += 1;
            Some(lr)
        } else {
            None
        };
        if cx.max(cxp) >= options.min_support {
            output_counts.push(OutputCount {
                output: decode(key),
                count_x: cx,
                count_x_prime: cxp,
                log_ratio,
            });
        }
    }
    if supported == 0 {
        return Err(Error::InsufficientSupport(options.min_support));
    }

    let (d2, dc) = sequence_distances(table, &ids_x, &ids_xp);
    let d = match options.metric {
        AuditMetric::Euclidean => d2,
        AuditMetric::Cosine => dc,
    };
    let bound = 2.0 * options.epsilon * d;
    let slack = 3.0 * max_se;
    let interior = interior_applies(config, n, &differing);
    let interior_bound = interior.then_some(options.epsilon * d);

    Ok(AuditReport {
        mechanism: config.kind,
        metric: options.metric,
        epsilon: options.epsilon,
        x: x.to_vec(),
        x_prime: x_prime.to_vec(),
        positions,
        distance_d2: d2,
        distance_dc: dc,
        trials: options.trials,
        min_support: options.min_support,
        distinct_outputs: counts.len(),
        supported_outputs: supported,
        output_counts,
        max_log_ratio,
        bound,
        slack,
        pass: max_log_ratio <= bound + slack,
        interior_max_log_ratio: interior.then_some(max_log_ratio),
        interior_bound,
        interior_pass: interior_bound.map(|b| max_log_ratio <= b + slack),
    })
}

/// A small named table with a default input pair for audits.
#[derive(Clone, Debug)]
pub struct AuditInstance {
    pub table: EmbeddingTable,
    pub x: Vec<String>,
    pub x_prime: Vec<String>,
}

/// Built-in audit instances. `tiny4x2`: four tokens in the plane, inputs of
/// two tokens that differ in the first position.
pub fn builtin_instance(name: &str, normalize: bool) -> Option<AuditInstance> {
    match name {
        "tiny4x2" => {
            let rows = [
                ("w0", [0.5, 0.0]),
                ("w1", [0.0, 0.5]),
                ("w2", [-0.5, 0.0]),
                ("w3", [0.0, -0.5]),
            ];
            let table = EmbeddingTable::from_rows(rows, normalize).expect("valid rows");
            Some(AuditInstance {
                table,
                x: vec!["w0".into(), "w1".into()],
                x_prime: vec!["w1".into(), "w1".into()],
            })
        }
        _ => None,
    }
}
