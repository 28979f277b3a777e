mod args;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use casper::corpus::{self, CorpusOptions, InputFormat, StopwordSet};
use casper::evaluation::{self, AuditMetric, AuditOptions, SweepGrid};
use casper::mechanisms::{MechanismConfig, MechanismKind, Sanitizer};
use casper::rng::parse_seed;
use casper::{EmbeddingTable, Error, LoadOptions};
use clap::Parser;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::args::{
    AttackArgs, AuditArgs, Cli, Command, MechanismArgs, SanitizeArgs, SweepArgs, TableArgs, TableSource,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_AUDIT_FAILED: u8 = 3;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message.lines().next().unwrap_or_default());
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let settings = Settings::load(cli.config.as_deref())?;
    if let Some(threads) = settings.opt(cli.threads, "threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Sanitize(a) => sanitize(&settings, a),
        Command::Attack(a) => attack(&settings, a),
        Command::Audit(a) => audit(&settings, a),
        Command::Sweep(a) => sweep(&settings, a),
        Command::Table(a) => table(&settings, a),
    }
}

/// Values from the --config file; command-line flags win over these.
struct Settings {
    values: Map<String, Value>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let values = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => return Err(Failure::usage("config file must hold a JSON object")),
                    Err(e) => return Err(Failure::usage(format!("config file: {e}"))),
                }
            }
        };
        Ok(Self { values })
    }

    fn opt<T: DeserializeOwned>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Failure::usage(format!("config key {key}: {e}"))),
        }
    }

    fn flag(&self, cli: bool, key: &str) -> CliResult<bool> {
        Ok(cli || self.opt::<bool>(None, key)?.unwrap_or(false))
    }

    fn list<T: DeserializeOwned>(&self, cli: Vec<T>, key: &str) -> CliResult<Vec<T>> {
        if !cli.is_empty() {
            return Ok(cli);
        }
        Ok(self.opt::<Vec<T>>(None, key)?.unwrap_or_default())
    }

    fn seed(&self, cli: Option<String>) -> CliResult<u64> {
        let raw = match cli {
            Some(s) => Value::String(s),
            None => self.values.get("seed").cloned().unwrap_or(Value::Null),
        };
        match raw {
            Value::Null => Ok(0),
            Value::Number(n) => n
                .as_u64()
                .ok_or_else(|| Failure::usage("seed must be a 64-bit unsigned integer")),
            Value::String(s) => parse_seed(&s).ok_or_else(|| Failure::usage(format!("invalid seed {s:?}"))),
            _ => Err(Failure::usage("seed must be a number or string")),
        }
    }

    fn table_options(&self, src: &TableSource) -> CliResult<(std::path::PathBuf, LoadOptions)> {
        let path = self
            .opt(src.embeddings.clone(), "embeddings")?
            .ok_or_else(|| Failure::usage("--embeddings is required"))?;
        let options = LoadOptions {
            limit: self.opt(src.limit, "limit")?,
            normalize: self.flag(src.normalize, "normalize")?,
        };
        Ok((path, options))
    }

    fn mechanism(&self, m: &MechanismArgs, normalize: bool) -> CliResult<MechanismConfig> {
        let kind: MechanismKind = self
            .opt(m.mechanism.clone(), "mechanism")?
            .unwrap_or_else(|| "casper".into())
            .parse()?;
        let mut config = MechanismConfig::new(kind);
        config.eta = self.opt(m.eta, "eta")?;
        config.epsilon = self.opt(m.epsilon, "epsilon")?;
        config.sigma = self.opt(m.sigma, "sigma")?;
        config.window = self.opt(m.window, "window")?;
        config.top_k = self.opt(m.top_k, "top_k")?;
        config.exclude_original = self.opt(m.exclude_original, "exclude_original")?;
        if let Some(max_vocab) = self.opt(m.max_vocab, "max_vocab")? {
            config.max_vocab = max_vocab;
        }
        config.normalize_embeddings = normalize;
        config.seed = self.seed(m.seed.clone())?;
        Ok(config)
    }

    fn stopwords(&self, cli: Option<String>, case_sensitive: bool) -> CliResult<StopwordSet> {
        match self.opt(cli, "stopwords")?.as_deref() {
            None => Ok(StopwordSet::english()),
            Some("none") => Ok(StopwordSet::empty()),
            Some(path) => Ok(StopwordSet::load(BufReader::new(File::open(path)?), case_sensitive)?),
        }
    }
}

fn open_input(path: &str) -> CliResult<Box<dyn BufRead>> {
    if path == "-" {
        Ok(Box::new(BufReader::new(io::stdin().lock())))
    } else {
        let file = File::open(path).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("cannot open {path}: {e}"),
        })?;
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_output(path: &str) -> CliResult<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn load_table(path: &Path, options: LoadOptions) -> CliResult<EmbeddingTable> {
    let start = Instant::now();
    let table = EmbeddingTable::load_path(path, options).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    log::info!(
        "loaded {} rows of dimension {} in {:.1?}",
        table.len(),
        table.dim(),
        start.elapsed()
    );
    Ok(table)
}

fn sanitize(settings: &Settings, a: SanitizeArgs) -> CliResult<u8> {
    let (path, load) = settings.table_options(&a.table)?;
    let config = settings.mechanism(&a.mechanism, load.normalize)?;
    config.validate()?;
    let format: InputFormat = settings
        .opt(a.format, "format")?
        .unwrap_or_else(|| "auto".into())
        .parse()?;
    let options = CorpusOptions {
        format,
        lowercase: settings.flag(a.lowercase, "lowercase")?,
        batch_size: settings.opt(a.batch_size, "batch_size")?.unwrap_or(256),
        ..CorpusOptions::default()
    };
    let case_sensitive = settings.flag(a.case_sensitive_stopwords, "case_sensitive_stopwords")?;
    let stopwords = settings.stopwords(a.stopwords, case_sensitive)?;
    let input = settings.opt(a.input, "input")?.unwrap_or_else(|| "-".into());
    let output = settings.opt(a.output, "output")?.unwrap_or_else(|| "-".into());

    let table = load_table(&path, load)?;
    let sanitizer = Sanitizer::new(&table, &config, &stopwords)?;
    let start = Instant::now();
    let stats = corpus::sanitize_corpus(open_input(&input)?, open_output(&output)?, &sanitizer, &options)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!("{:.0} tokens/s", stats.tokens as f64 / secs.max(1e-9));
    eprintln!("{}", serde_json::to_string(&stats)?);
    Ok(0)
}

fn attack(settings: &Settings, a: AttackArgs) -> CliResult<u8> {
    let (path, load) = settings.table_options(&a.table)?;
    let k = settings.opt(a.k, "k")?.unwrap_or(5);
    if k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let input = settings.opt(a.input, "input")?.unwrap_or_else(|| "-".into());
    let output = settings.opt(a.output, "output")?.unwrap_or_else(|| "-".into());
    let table = load_table(&path, load)?;
    let records = corpus::read_sentence_records(open_input(&input)?).collect::<Result<Vec<_>, _>>()?;
    let report = evaluation::attack_pr_at_k(&records, &table, k, Default::default())?;
    write_json(&output, &report)?;
    Ok(0)
}

fn audit(settings: &Settings, a: AuditArgs) -> CliResult<u8> {
    let normalize = settings.flag(a.table.normalize, "normalize")?;
    let mut config = settings.mechanism(&a.mechanism, normalize)?;
    let epsilon = config
        .epsilon
        .or(config.eta)
        .ok_or_else(|| Failure::usage("audit requires --epsilon"))?;
    if matches!(config.kind, MechanismKind::Casper | MechanismKind::DchiNoise) && config.eta.is_none() {
        config.eta = Some(epsilon);
    }
    if let Some(m) = settings.opt(a.noise_multiplier, "noise_multiplier")? {
        config.noise_multiplier = m;
    }
    config.validate()?;
    let metric: AuditMetric = settings
        .opt(a.metric, "metric")?
        .unwrap_or_else(|| "euclidean".into())
        .parse()?;
    let options = AuditOptions {
        epsilon,
        trials: settings.opt(a.trials, "trials")?.unwrap_or(1_000_000),
        min_support: settings.opt(a.min_support, "min_support")?.unwrap_or(1000),
        metric,
        seed: config.seed,
        ..AuditOptions::default()
    };
    let split = |s: String| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let x = settings.opt(a.x, "x")?.map(split);
    let x_prime = settings.opt(a.x_prime, "x_prime")?.map(split);
    let output = settings.opt(a.output, "output")?.unwrap_or_else(|| "-".into());

    let embeddings = settings.opt(a.table.embeddings.clone(), "embeddings")?;
    let instance = settings.opt(a.instance, "instance")?;
    let (table, x, x_prime) = match (instance, embeddings) {
        (Some(_), Some(_)) => return Err(Failure::usage("give either --instance or --embeddings, not both")),
        (None, Some(_)) => {
            let (path, load) = settings.table_options(&a.table)?;
            let (Some(x), Some(x_prime)) = (x, x_prime) else {
                return Err(Failure::usage("--x and --x-prime are required with --embeddings"));
            };
            (load_table(&path, load)?, x, x_prime)
        }
        (name, None) => {
            let name = name.unwrap_or_else(|| "tiny4x2".into());
            let inst = evaluation::builtin_instance(&name, normalize)
                .ok_or_else(|| Failure::usage(format!("unknown instance {name:?}")))?;
            (inst.table, x.unwrap_or(inst.x), x_prime.unwrap_or(inst.x_prime))
        }
    };
    let report = match evaluation::dp_audit(&config, &x, &x_prime, &table, &options) {
        // Nothing could be certified: the two output laws barely overlap.
        Err(e @ Error::InsufficientSupport(_)) => {
            return Err(Failure {
                code: EXIT_AUDIT_FAILED,
                message: format!("audit failed: {e}"),
            })
        }
        other => other?,
    };
    write_json(&output, &report)?;
    Ok(if report.pass { 0 } else { EXIT_AUDIT_FAILED })
}

fn sweep(settings: &Settings, a: SweepArgs) -> CliResult<u8> {
    let (path, load) = settings.table_options(&a.table)?;
    let template = settings.mechanism(&a.mechanism, load.normalize)?;
    if !template.kind.uses_context() {
        return Err(Failure::usage("sweep varies sigma and window; use casper or convdef"));
    }
    let grid = SweepGrid {
        sigmas: settings.list(a.sigmas, "sigmas")?,
        windows: settings.list(a.windows, "windows")?,
        etas: settings.list(a.etas, "etas")?,
    };
    if grid.cells().is_empty() {
        return Err(Failure::usage("--sigmas, --windows and --etas must all be non-empty"));
    }
    for &(sigma, window, eta) in &grid.cells() {
        MechanismConfig {
            sigma: Some(sigma),
            window: Some(window),
            eta: Some(eta),
            ..template.clone()
        }
        .validate()?;
    }
    let k = settings.opt(a.k, "k")?.unwrap_or(5);
    let lowercase = settings.flag(a.lowercase, "lowercase")?;
    let stopwords = settings.stopwords(a.stopwords, false)?;
    let input = settings.opt(a.input, "input")?.unwrap_or_else(|| "-".into());
    let output = settings.opt(a.output, "output")?.unwrap_or_else(|| "-".into());

    let table = load_table(&path, load)?;
    let mut sentences = Vec::new();
    for (i, line) in open_input(&input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = corpus::parse_input_line(&line, InputFormat::Auto, i + 1)?;
        sentences.push((rec.id.clone(), rec.into_tokens(lowercase)));
    }
    let rows = evaluation::parameter_sweep(
        &grid,
        &template,
        &sentences,
        &table,
        &stopwords,
        k,
        template.seed,
        Default::default(),
    )?;
    let mut out = open_output(&output)?;
    evaluation::write_sweep_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn table(settings: &Settings, a: TableArgs) -> CliResult<u8> {
    let (path, load) = settings.table_options(&a.table)?;
    let sample = settings.opt(a.sample, "sample")?.unwrap_or(5);
    let table = load_table(&path, load)?;
    let rows: Vec<Value> = table
        .tokens()
        .iter()
        .take(sample)
        .enumerate()
        .map(|(i, t)| {
            serde_json::json!({
                "token": t,
                "norm": table.norm(casper::TokenId(i as u32)),
                "values": table.row(casper::TokenId(i as u32)),
            })
        })
        .collect();
    let summary = serde_json::json!({
        "rows": table.len(),
        "dim": table.dim(),
        "normalized": table.is_normalized(),
        "duplicates_skipped": table.duplicates(),
        "sample": rows,
    });
    write_json("-", &summary)?;
    Ok(0)
}

fn write_json<T: serde::Serialize>(path: &str, value: &T) -> CliResult<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
