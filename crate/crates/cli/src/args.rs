use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Token-level text sanitization under metric differential privacy.
///
/// Every flag can also be given in a JSON file passed with --config, keyed by
/// the long flag name with dashes replaced by underscores
/// (e.g. {"mechanism": "casper", "eta": 10, "top_k": 5}). Flags given on the
/// command line take precedence over the file; built-in defaults apply last.
#[derive(Debug, Parser)]
#[command(name = "casper", version)]
pub struct Cli {
    /// JSON file with flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads [default: logical cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sanitize a JSONL/TSV corpus; records go to --output, stats to stderr.
    Sanitize(SanitizeArgs),
    /// Run the top-k nearest-neighbor reconstruction attack on sanitized JSONL.
    Attack(AttackArgs),
    /// Monte-Carlo audit of the metric-DP bound; exit 3 when the audit fails.
    Audit(AuditArgs),
    /// Sweep sigma x window x eta and write one CSV row per grid point.
    Sweep(SweepArgs),
    /// Summarize an embedding file.
    Table(TableArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct TableSource {
    /// GloVe-format embedding file (required unless set in --config).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,

    /// Load at most this many rows [default: all].
    #[arg(long)]
    pub limit: Option<usize>,

    /// Scale embeddings to unit norm [default: false].
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct MechanismArgs {
    /// casper | convdef | dchi_noise | santext | custext [default: casper].
    #[arg(long)]
    pub mechanism: Option<String>,

    /// Noise scale for casper and dchi_noise [no default; required by them].
    #[arg(long)]
    pub eta: Option<f64>,

    /// Exponential-mechanism scale for santext and custext [no default; required by them].
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Gaussian window width for casper and convdef [no default; required by them].
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Window length L (total positions) for casper and convdef [no default; required by them].
    #[arg(long)]
    pub window: Option<usize>,

    /// Candidate pool size K for custext [no default; required by it].
    #[arg(long)]
    pub top_k: Option<usize>,

    /// Never return the original token [default: true for convdef, false otherwise].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_original: Option<bool>,

    /// Largest vocabulary santext may score [default: 500000].
    #[arg(long)]
    pub max_vocab: Option<usize>,

    /// Random seed, decimal or 0x-hex [default: 0].
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct SanitizeArgs {
    #[command(flatten)]
    pub table: TableSource,

    #[command(flatten)]
    pub mechanism: MechanismArgs,

    /// Stopword file, one per line, or "none" [default: bundled English list].
    #[arg(long)]
    pub stopwords: Option<String>,

    /// Match stopwords case-sensitively [default: false].
    #[arg(long)]
    pub case_sensitive_stopwords: bool,

    /// Lowercase text before lookup [default: false].
    #[arg(long)]
    pub lowercase: bool,

    /// Input corpus, "-" for stdin [default: -].
    #[arg(long)]
    pub input: Option<String>,

    /// Output JSONL, "-" for stdout [default: -].
    #[arg(long)]
    pub output: Option<String>,

    /// auto | jsonl | tsv [default: auto].
    #[arg(long)]
    pub format: Option<String>,

    /// Sentences per nearest-neighbor batch [default: 256].
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub table: TableSource,

    /// Number of neighbors the attacker inspects [default: 5].
    #[arg(long)]
    pub k: Option<usize>,

    /// Sanitized JSONL, "-" for stdin [default: -].
    #[arg(long)]
    pub input: Option<String>,

    /// Report JSON, "-" for stdout [default: -].
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Built-in instance name: tiny4x2 [default: tiny4x2 unless --embeddings is given].
    #[arg(long)]
    pub instance: Option<String>,

    #[command(flatten)]
    pub table: TableSource,

    #[command(flatten)]
    pub mechanism: MechanismArgs,

    /// First input, space separated [default: the instance's pair].
    #[arg(long)]
    pub x: Option<String>,

    /// Second input, space separated [default: the instance's pair].
    #[arg(long)]
    pub x_prime: Option<String>,

    /// Mechanism runs per input [default: 1000000].
    #[arg(long)]
    pub trials: Option<u64>,

    /// Minimum count under both inputs for an output to be scored [default: 1000].
    #[arg(long)]
    pub min_support: Option<u64>,

    /// euclidean | cosine [default: euclidean].
    #[arg(long)]
    pub metric: Option<String>,

    /// Multiply every noise vector; values other than 1 break calibration [default: 1.0].
    #[arg(long)]
    pub noise_multiplier: Option<f64>,

    /// Report JSON, "-" for stdout [default: -].
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub table: TableSource,

    #[command(flatten)]
    pub mechanism: MechanismArgs,

    /// Comma-separated sigma values [no default].
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Vec<f64>,

    /// Comma-separated window lengths [no default].
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,

    /// Comma-separated eta values [no default].
    #[arg(long, value_delimiter = ',')]
    pub etas: Vec<f64>,

    /// Attack depth [default: 5].
    #[arg(long)]
    pub k: Option<usize>,

    /// Stopword file or "none" [default: bundled English list].
    #[arg(long)]
    pub stopwords: Option<String>,

    /// Lowercase text before lookup [default: false].
    #[arg(long)]
    pub lowercase: bool,

    /// Corpus sample, "-" for stdin [default: -].
    #[arg(long)]
    pub input: Option<String>,

    /// CSV output, "-" for stdout [default: -].
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[command(flatten)]
    pub table: TableSource,

    /// Rows to print [default: 5].
    #[arg(long)]
    pub sample: Option<usize>,
}
