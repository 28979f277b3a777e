//! Token sanitization mechanisms.
//!
//! Five mechanisms share one entry point, [`Sanitizer`]:
//!
//! * `casper`: Gaussian-weighted context vector around the token, plus
//!   multivariate Laplacian noise, mapped back to the nearest vocabulary token.
//! * `convdef`: the same context vector without noise; the original token is
//!   never returned.
//! * `dchi_noise`: Laplacian noise on the token's own embedding, then the
//!   nearest vocabulary token.
//! * `santext`: exponential mechanism over the whole vocabulary, scored by
//!   cosine distance to the original embedding.
//! * `custext`: exponential mechanism over the top-K nearest tokens.
//!
//! Stopwords and out-of-vocabulary tokens are passed through unchanged.
//! Stopwords still contribute context to their neighbors; OOV positions do not.

mod exponential;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::exponential::{exponential_probabilities, exponential_sample, sample_index};
use crate::corpus::StopwordSet;
use crate::embeddings::{EmbeddingTable, Neighbor, Query, TokenId};
use crate::error::{Error, Result};
use crate::noise::{NoiseParams, NoiseSampler};
use crate::par::{self, Exec};
use crate::rng::RngState;
use crate::stencil::{window_weights_at, StencilWeights};

/// Default cap on the vocabulary size SanText will score per token.
pub const DEFAULT_MAX_VOCAB: usize = 500_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Casper,
    Convdef,
    DchiNoise,
    Santext,
    Custext,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        MechanismKind::Casper,
        MechanismKind::Convdef,
        MechanismKind::DchiNoise,
        MechanismKind::Santext,
        MechanismKind::Custext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MechanismKind::Casper => "casper",
            MechanismKind::Convdef => "convdef",
            MechanismKind::DchiNoise => "dchi_noise",
            MechanismKind::Santext => "santext",
            MechanismKind::Custext => "custext",
        }
    }

    /// Whether the mechanism mixes neighboring embeddings.
    pub fn uses_context(self) -> bool {
        matches!(self, MechanismKind::Casper | MechanismKind::Convdef)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "casper" | "econvdef" => Ok(MechanismKind::Casper),
            "convdef" => Ok(MechanismKind::Convdef),
            "dchi_noise" | "dchi" => Ok(MechanismKind::DchiNoise),
            "santext" => Ok(MechanismKind::Santext),
            "custext" => Ok(MechanismKind::Custext),
            other => Err(Error::InvalidConfig(format!("unknown mechanism {other:?}"))),
        }
    }
}

fn default_max_vocab() -> usize {
    DEFAULT_MAX_VOCAB
}

fn default_noise_multiplier() -> f64 {
    1.0
}

/// Everything that determines a sanitization run.
///
/// Parameters that a mechanism does not use are ignored; the ones it needs
/// must be present (see [`MechanismConfig::validate`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// `None` selects the mechanism's default: on for convdef, off otherwise.
    #[serde(default)]
    pub exclude_original: Option<bool>,
    #[serde(default)]
    pub normalize_embeddings: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    /// Scales every noise vector. Anything other than 1.0 breaks the privacy
    /// calibration; it exists so the auditor can be shown a faulty mechanism.
    #[serde(default = "default_noise_multiplier")]
    pub noise_multiplier: f64,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind) -> Self {
        Self {
            kind,
            eta: None,
            epsilon: None,
            sigma: None,
            window: None,
            top_k: None,
            exclude_original: None,
            normalize_embeddings: false,
            seed: 0,
            max_vocab: DEFAULT_MAX_VOCAB,
            noise_multiplier: 1.0,
        }
    }

    pub fn casper(eta: f64, sigma: f64, window: usize) -> Self {
        Self {
            eta: Some(eta),
            sigma: Some(sigma),
            window: Some(window),
            ..Self::new(MechanismKind::Casper)
        }
    }

    pub fn convdef(sigma: f64, window: usize) -> Self {
        Self {
            sigma: Some(sigma),
            window: Some(window),
            ..Self::new(MechanismKind::Convdef)
        }
    }

    pub fn dchi_noise(eta: f64) -> Self {
        Self {
            eta: Some(eta),
            ..Self::new(MechanismKind::DchiNoise)
        }
    }

    pub fn santext(epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::new(MechanismKind::Santext)
        }
    }

    pub fn custext(epsilon: f64, top_k: usize) -> Self {
        Self {
            epsilon: Some(epsilon),
            top_k: Some(top_k),
            ..Self::new(MechanismKind::Custext)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_exclude_original(mut self, exclude: bool) -> Self {
        self.exclude_original = Some(exclude);
        self
    }

    pub fn exclude_original(&self) -> bool {
        self.exclude_original.unwrap_or(self.kind == MechanismKind::Convdef)
    }

    /// Checks that the parameters required by `kind` are present and in range.
    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<Resolved> {
        let kind = self.kind;
        let need_pos = |name: &str, v: Option<f64>, allow_zero: bool| -> Result<f64> {
            let v = v.ok_or_else(|| Error::InvalidConfig(format!("{kind} requires {name}")))?;
            let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
            if !ok {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
            Ok(v)
        };
        let need_count = |name: &str, v: Option<usize>| -> Result<usize> {
            match v {
                Some(n) if n >= 1 => Ok(n),
                Some(_) => Err(Error::InvalidConfig(format!("{name} must be at least 1"))),
                None => Err(Error::InvalidConfig(format!("{kind} requires {name}"))),
            }
        };
        if !(self.noise_multiplier > 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::InvalidConfig("noise multiplier must be positive".into()));
        }
        Ok(match kind {
            MechanismKind::Casper => Resolved::Casper {
                eta: need_pos("eta", self.eta, false)?,
                sigma: need_pos("sigma", self.sigma, false)?,
                window: need_count("window", self.window)?,
            },
            MechanismKind::Convdef => Resolved::Convdef {
                sigma: need_pos("sigma", self.sigma, false)?,
                window: need_count("window", self.window)?,
            },
            MechanismKind::DchiNoise => Resolved::DchiNoise {
                eta: need_pos("eta", self.eta, false)?,
            },
            // epsilon = 0 is the uniform limit of the exponential mechanism.
            MechanismKind::Santext => Resolved::Santext {
                epsilon: need_pos("epsilon", self.epsilon, true)?,
            },
            MechanismKind::Custext => Resolved::Custext {
                epsilon: need_pos("epsilon", self.epsilon, true)?,
                top_k: need_count("top_k", self.top_k)?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Resolved {
    Casper { eta: f64, sigma: f64, window: usize },
    Convdef { sigma: f64, window: usize },
    DchiNoise { eta: f64 },
    Santext { epsilon: f64 },
    Custext { epsilon: f64, top_k: usize },
}

/// One token of sanitizer output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizedToken {
    pub original: String,
    pub replacement: String,
    pub was_stopword: bool,
    pub was_oov: bool,
}

impl SanitizedToken {
    pub fn passthrough(&self) -> bool {
        self.was_stopword || self.was_oov
    }
}

/// `sum_j w_j * phi_j` over the window. Positions without an embedding are
/// skipped and the remaining weights renormalized.
pub fn compose_context_vector(embeddings: &[Option<&[f64]>], i: usize, weights: &StencilWeights) -> Vec<f64> {
    let dim = embeddings
        .iter()
        .flatten()
        .map(|e| e.len())
        .next()
        .expect("at least one embedded position");
    let mut out = vec![0.0; dim];
    let mut kept = 0.0;
    let mut dropped = false;
    for (o, w) in weights.iter() {
        match embeddings[(i as i64 + o) as usize] {
            Some(e) => {
                for (acc, x) in out.iter_mut().zip(e) {
                    *acc += w * x;
                }
                kept += w;
            }
            None => dropped = true,
        }
    }
    if dropped && kept > 0.0 {
        out.iter_mut().for_each(|v| *v /= kept);
    }
    out
}

/// A validated mechanism bound to a table and stopword list.
pub struct Sanitizer<'a> {
    table: &'a EmbeddingTable,
    stopwords: &'a StopwordSet,
    config: MechanismConfig,
    resolved: Resolved,
    noise: Option<NoiseSampler>,
    exec: Exec,
}

/// How a single position is to be handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Stopword,
    Oov,
    Run(TokenId),
}

impl<'a> Sanitizer<'a> {
    pub fn new(table: &'a EmbeddingTable, config: &MechanismConfig, stopwords: &'a StopwordSet) -> Result<Self> {
        let resolved = config.resolve()?;
        if config.normalize_embeddings && !table.is_normalized() {
            return Err(Error::InvalidConfig(
                "normalize_embeddings is set but the table was loaded unnormalized".into(),
            ));
        }
        if let Resolved::Santext { .. } = resolved {
            if table.len() > config.max_vocab {
                return Err(Error::InvalidConfig(format!(
                    "santext scores the full vocabulary: {} rows exceeds max_vocab {}",
                    table.len(),
                    config.max_vocab
                )));
            }
        }
        let noise = match resolved {
            Resolved::Casper { eta, .. } | Resolved::DchiNoise { eta } => Some(NoiseSampler::new(NoiseParams::new(
                table.dim(),
                eta / config.noise_multiplier,
            )?)),
            _ => None,
        };
        Ok(Self {
            table,
            stopwords,
            config: config.clone(),
            resolved,
            noise,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn table(&self) -> &EmbeddingTable {
        self.table
    }

    /// The random stream used for sentence `index` of a run.
    pub fn sentence_rng(&self, index: u64) -> RngState {
        RngState::new(self.config.seed, index)
    }

    fn slots(&self, tokens: &[String]) -> Vec<(Slot, bool, bool)> {
        tokens
            .iter()
            .map(|t| {
                let stop = self.stopwords.contains(t);
                let id = self.table.id(t);
                let slot = match (stop, id) {
                    (true, _) => Slot::Stopword,
                    (false, None) => Slot::Oov,
                    (false, Some(id)) => Slot::Run(id),
                };
                (slot, stop, id.is_none())
            })
            .collect()
    }

    fn exclude_for(&self, id: TokenId) -> Option<TokenId> {
        self.config.exclude_original().then_some(id)
    }

    /// Query vector for position `i`: context (or own embedding) plus noise.
    fn query_for(&self, ids: &[Option<TokenId>], i: usize, rng: &mut RngState) -> Vec<f64> {
        let own = ids[i].expect("mechanism runs on embedded tokens");
        let mut q = match self.resolved {
            Resolved::Casper { sigma, window, .. } | Resolved::Convdef { sigma, window } => {
                let embeddings: Vec<Option<&[f64]>> = ids.iter().map(|id| id.map(|id| self.table.row(id))).collect();
                let weights = window_weights_at(i, ids.len(), window, sigma);
                compose_context_vector(&embeddings, i, &weights)
            }
            _ => self.table.row(own).to_vec(),
        };
        if let Some(noise) = &self.noise {
            let mut p = vec![0.0; q.len()];
            noise.sample_into(rng, &mut p);
            q.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        q
    }

    fn pool_for(&self, own: TokenId) -> Result<Vec<Neighbor>> {
        match self.resolved {
            Resolved::Santext { .. } => {
                let d = self.table.distances_to_all(self.table.row(own))?;
                Ok(d.into_iter()
                    .enumerate()
                    .map(|(i, distance)| Neighbor {
                        id: TokenId(i as u32),
                        distance,
                    })
                    .collect())
            }
            Resolved::Custext { top_k, .. } => self.table.nearest_neighbors(self.table.row(own), top_k, &[]),
            _ => unreachable!("pool requested for a nearest-token mechanism"),
        }
    }

    fn epsilon(&self) -> f64 {
        match self.resolved {
            Resolved::Santext { epsilon } | Resolved::Custext { epsilon, .. } => epsilon,
            _ => unreachable!(),
        }
    }

    /// Replacement for position `i` of an id sequence (`None` = no embedding).
    ///
    /// Draws from `rng` exactly as the sentence-level path does for this
    /// position.
    pub fn sanitize_position(&self, ids: &[Option<TokenId>], i: usize, rng: &mut RngState) -> Result<TokenId> {
        let own = ids[i].ok_or_else(|| Error::InvalidConfig(format!("position {i} has no embedding")))?;
        match self.resolved {
            Resolved::Santext { .. } | Resolved::Custext { .. } => {
                let pool = self.pool_for(own)?;
                Ok(exponential_sample(&pool, self.epsilon(), rng))
            }
            _ => {
                let q = self.query_for(ids, i, rng);
                let exclude: Vec<TokenId> = self.exclude_for(own).into_iter().collect();
                let best = self.table.nearest_neighbors(&q, 1, &exclude)?;
                best.first().map(|n| n.id).ok_or(Error::EmptyTable)
            }
        }
    }

    /// Runs the mechanism on every position of a fully embedded id sequence.
    pub fn sanitize_ids(&self, ids: &[TokenId], rng: &mut RngState) -> Result<Vec<TokenId>> {
        let opt: Vec<Option<TokenId>> = ids.iter().copied().map(Some).collect();
        (0..ids.len())
            .map(|i| self.sanitize_position(&opt, i, rng).map_err(|e| e.at(i)))
            .collect()
    }

    pub fn sanitize_sentence(&self, tokens: &[String], rng: &mut RngState) -> Result<Vec<SanitizedToken>> {
        let plan = self.plan(tokens, rng.clone());
        let (out, advanced) = self
            .resolve_plans(vec![plan], Exec::Sequential)
            .pop()
            .expect("one sentence");
        *rng = advanced;
        out
    }

    /// Sanitizes a batch of sentences; sentence `k` uses stream `streams[k]`.
    ///
    /// All nearest-token searches of the batch are answered in one table pass.
    pub fn sanitize_batch<S: AsRef<[String]> + Sync>(
        &self,
        sentences: &[S],
        streams: &[u64],
    ) -> Vec<Result<Vec<SanitizedToken>>> {
        assert_eq!(sentences.len(), streams.len());
        let plans = par::map_range(self.exec, sentences.len(), |k| {
            self.plan(sentences[k].as_ref(), self.sentence_rng(streams[k]))
        });
        self.resolve_plans(plans, self.exec)
            .into_iter()
            .map(|(out, _)| out)
            .collect()
    }

    fn plan<'t>(&self, tokens: &'t [String], mut rng: RngState) -> Plan<'t> {
        let slots = self.slots(tokens);
        // Stopwords still provide context when they have an embedding.
        let ids: Vec<Option<TokenId>> = tokens.iter().map(|t| self.table.id(t)).collect();
        let mut queries = Vec::new();
        if !matches!(self.resolved, Resolved::Santext { .. } | Resolved::Custext { .. }) {
            for (i, (slot, ..)) in slots.iter().enumerate() {
                if let Slot::Run(id) = slot {
                    let q = self.query_for(&ids, i, &mut rng);
                    queries.push((i, q, self.exclude_for(*id)));
                }
            }
        }
        Plan {
            tokens,
            slots,
            queries,
            rng,
        }
    }

    fn resolve_plans(&self, plans: Vec<Plan<'_>>, exec: Exec) -> Vec<(Result<Vec<SanitizedToken>>, RngState)> {
        let excludes: Vec<Vec<TokenId>> = plans
            .iter()
            .flat_map(|p| p.queries.iter().map(|(_, _, ex)| ex.iter().copied().collect()))
            .collect();
        let queries: Vec<Query<'_>> = plans
            .iter()
            .flat_map(|p| p.queries.iter())
            .zip(&excludes)
            .map(|((_, q, _), ex)| Query::new(q, ex))
            .collect();
        let mut answers = self.table.nearest_batch(&queries, 1, exec).into_iter();

        let mut work = Vec::with_capacity(plans.len());
        for p in &plans {
            let row: Vec<Result<TokenId>> = p
                .queries
                .iter()
                .map(|_| {
                    let ans = answers.next().expect("answer per query");
                    ans.and_then(|nbs| nbs.first().map(|n| n.id).ok_or(Error::EmptyTable))
                })
                .collect();
            work.push(row);
        }
        drop(queries);
        let work: Vec<(Plan<'_>, Vec<Result<TokenId>>)> = plans.into_iter().zip(work).collect();
        par::map_vec(exec, work, |(mut plan, answers)| {
            let out = self.assemble(&mut plan, answers);
            (out, plan.rng)
        })
    }

    fn assemble(&self, plan: &mut Plan<'_>, answers: Vec<Result<TokenId>>) -> Result<Vec<SanitizedToken>> {
        let mut answers = plan.queries.iter().map(|(i, ..)| *i).zip(answers);
        let mut out = Vec::with_capacity(plan.tokens.len());
        for (i, (token, (slot, stop, oov))) in plan.tokens.iter().zip(&plan.slots).enumerate() {
            let replacement = match slot {
                Slot::Stopword | Slot::Oov => token.clone(),
                Slot::Run(id) => {
                    let chosen = match self.resolved {
                        Resolved::Santext { .. } | Resolved::Custext { .. } => {
                            let pool = self.pool_for(*id).map_err(|e| e.at(i))?;
                            exponential_sample(&pool, self.epsilon(), &mut plan.rng)
                        }
                        _ => {
                            let (pos, ans) = answers.next().expect("query per run slot");
                            debug_assert_eq!(pos, i);
                            ans.map_err(|e| e.at(i))?
                        }
                    };
                    self.table.token(chosen).to_string()
                }
            };
            out.push(SanitizedToken {
                original: token.clone(),
                replacement,
                was_stopword: *stop,
                was_oov: *oov,
            });
        }
        Ok(out)
    }
}

struct Plan<'t> {
    tokens: &'t [String],
    slots: Vec<(Slot, bool, bool)>,
    queries: Vec<(usize, Vec<f64>, Option<TokenId>)>,
    rng: RngState,
}

/// Sanitizes one tokenized sentence.
pub fn sanitize_sentence(
    tokens: &[String],
    table: &EmbeddingTable,
    config: &MechanismConfig,
    stopwords: &StopwordSet,
    rng: &mut RngState,
) -> Result<Vec<SanitizedToken>> {
    Sanitizer::new(table, config, stopwords)?.sanitize_sentence(tokens, rng)
}

fn single(
    table: &EmbeddingTable,
    config: &MechanismConfig,
    ids: &[Option<TokenId>],
    i: usize,
    rng: &mut RngState,
) -> Result<SanitizedToken> {
    let none = StopwordSet::empty();
    let s = Sanitizer::new(table, config, &none)?;
    let chosen = s.sanitize_position(ids, i, rng)?;
    let original = ids[i].expect("checked by sanitize_position");
    Ok(SanitizedToken {
        original: table.token(original).to_string(),
        replacement: table.token(chosen).to_string(),
        was_stopword: false,
        was_oov: false,
    })
}

/// CASPER on position `i` of a sentence given as table ids.
pub fn sanitize_token_casper(
    table: &EmbeddingTable,
    sentence: &[Option<TokenId>],
    i: usize,
    config: &MechanismConfig,
    rng: &mut RngState,
) -> Result<SanitizedToken> {
    check_kind(config, MechanismKind::Casper)?;
    single(table, config, sentence, i, rng)
}

/// ConvDef on position `i`; deterministic.
pub fn sanitize_token_convdef(
    table: &EmbeddingTable,
    sentence: &[Option<TokenId>],
    i: usize,
    config: &MechanismConfig,
) -> Result<SanitizedToken> {
    check_kind(config, MechanismKind::Convdef)?;
    let mut unused = RngState::new(config.seed, 0);
    single(table, config, sentence, i, &mut unused)
}

pub fn sanitize_token_dchi(
    table: &EmbeddingTable,
    token: TokenId,
    config: &MechanismConfig,
    rng: &mut RngState,
) -> Result<SanitizedToken> {
    check_kind(config, MechanismKind::DchiNoise)?;
    single(table, config, &[Some(token)], 0, rng)
}

pub fn sanitize_token_santext(
    table: &EmbeddingTable,
    token: TokenId,
    config: &MechanismConfig,
    rng: &mut RngState,
) -> Result<SanitizedToken> {
    check_kind(config, MechanismKind::Santext)?;
    single(table, config, &[Some(token)], 0, rng)
}

pub fn sanitize_token_custext(
    table: &EmbeddingTable,
    token: TokenId,
    config: &MechanismConfig,
    rng: &mut RngState,
) -> Result<SanitizedToken> {
    check_kind(config, MechanismKind::Custext)?;
    single(table, config, &[Some(token)], 0, rng)
}

fn check_kind(config: &MechanismConfig, expected: MechanismKind) -> Result<()> {
    if config.kind != expected {
        return Err(Error::InvalidConfig(format!(
            "expected a {expected} configuration, got {}",
            config.kind
        )));
    }
    Ok(())
}
