//! Tokenization, stopwords, and streaming corpus sanitization.
//!
//! Input is JSON Lines (`{"id": .., "text": ..}` or `{"id": .., "tokens": [..]}`)
//! or TSV (`id<TAB>text`); output is one [`SentenceRecord`] per line.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::mechanisms::{SanitizedToken, Sanitizer};

const ENGLISH_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Splits on Unicode whitespace, then peels leading and trailing ASCII
/// punctuation off each piece as single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let start = piece.find(|c: char| !c.is_ascii_punctuation()).unwrap_or(piece.len());
        let end = piece
            .rfind(|c: char| !c.is_ascii_punctuation())
            .map(|i| i + piece[i..].chars().next().map_or(1, char::len_utf8))
            .unwrap_or(start);
        out.extend(piece[..start].chars().map(String::from));
        if start < end {
            out.push(piece[start..end].to_string());
        }
        out.extend(piece[end.max(start)..].chars().map(String::from));
    }
    out
}

pub fn tokenize_with(text: &str, lowercase: bool) -> Vec<String> {
    if lowercase {
        tokenize(&text.to_lowercase())
    } else {
        tokenize(text)
    }
}

#[derive(Clone, Debug, Default)]
pub struct StopwordSet {
    words: HashSet<String>,
    case_sensitive: bool,
}

impl StopwordSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The bundled 179-word English list, matched case-insensitively.
    pub fn english() -> Self {
        Self::from_words(ENGLISH_STOPWORDS.lines(), false)
    }

    pub fn from_words<I, S>(words: I, case_sensitive: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_string())
            .filter(|w| !w.is_empty())
            .map(|w| if case_sensitive { w } else { w.to_lowercase() })
            .collect();
        Self { words, case_sensitive }
    }

    /// One word per line; blank lines are ignored.
    pub fn load<R: BufRead>(reader: R, case_sensitive: bool) -> Result<Self> {
        let lines = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self::from_words(lines, case_sensitive))
    }

    pub fn contains(&self, token: &str) -> bool {
        if self.case_sensitive {
            self.words.contains(token)
        } else {
            self.words.contains(&token.to_lowercase())
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordId {
    Int(i64),
    Str(String),
}

impl std::fmt::Display for RecordId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecordId::Int(i) => write!(f, "{i}"),
            RecordId::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct InputRecord {
    pub id: RecordId,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
}

impl InputRecord {
    pub fn into_tokens(self, lowercase: bool) -> Vec<String> {
        match (self.tokens, self.text) {
            (Some(tokens), _) if lowercase => tokens.into_iter().map(|t| t.to_lowercase()).collect(),
            (Some(tokens), _) => tokens,
            (None, Some(text)) => tokenize_with(&text, lowercase),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: RecordId,
    pub original_tokens: Vec<String>,
    pub sanitized_tokens: Vec<String>,
    pub stopword_mask: Vec<bool>,
    pub oov_mask: Vec<bool>,
}

impl SentenceRecord {
    pub fn from_tokens(id: RecordId, tokens: &[SanitizedToken]) -> Self {
        Self {
            id,
            original_tokens: tokens.iter().map(|t| t.original.clone()).collect(),
            sanitized_tokens: tokens.iter().map(|t| t.replacement.clone()).collect(),
            stopword_mask: tokens.iter().map(|t| t.was_stopword).collect(),
            oov_mask: tokens.iter().map(|t| t.was_oov).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.original_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original_tokens.is_empty()
    }

    /// Whether the mechanism ran at position `i`.
    pub fn evaluated(&self, i: usize) -> bool {
        !self.stopword_mask[i] && !self.oov_mask[i]
    }

    /// Checks the length and mask invariants.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.original_tokens.len();
        if self.sanitized_tokens.len() != n || self.stopword_mask.len() != n || self.oov_mask.len() != n {
            return Err(format!("record {}: token and mask lengths differ", self.id));
        }
        for i in 0..n {
            if !self.evaluated(i) && self.original_tokens[i] != self.sanitized_tokens[i] {
                return Err(format!("record {}: masked position {i} was changed", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputFormat {
    /// JSON Lines when a line starts with `{`, TSV otherwise.
    #[default]
    Auto,
    Jsonl,
    Tsv,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(InputFormat::Auto),
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "tsv" => Ok(InputFormat::Tsv),
            other => Err(Error::InvalidConfig(format!("unknown input format {other:?}"))),
        }
    }
}

/// Parses one non-blank input line.
pub fn parse_input_line(line: &str, format: InputFormat, line_no: usize) -> Result<InputRecord> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let json = match format {
        InputFormat::Jsonl => true,
        InputFormat::Tsv => false,
        InputFormat::Auto => trimmed.trim_start().starts_with('{'),
    };
    let bad = |message: String| Error::BadRecord { line: line_no, message };
    if json {
        let rec: InputRecord = serde_json::from_str(trimmed).map_err(|e| bad(e.to_string()))?;
        if rec.text.is_none() && rec.tokens.is_none() {
            return Err(bad("record has neither text nor tokens".into()));
        }
        Ok(rec)
    } else {
        let (id, text) = trimmed
            .split_once('\t')
            .ok_or_else(|| bad("expected id<TAB>text".into()))?;
        let id = id
            .parse::<i64>()
            .map(RecordId::Int)
            .unwrap_or_else(|_| RecordId::Str(id.to_string()));
        Ok(InputRecord {
            id,
            text: Some(text.to_string()),
            tokens: None,
        })
    }
}

/// Reads [`SentenceRecord`] lines, skipping blank ones.
pub fn read_sentence_records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<SentenceRecord>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(
            serde_json::from_str::<SentenceRecord>(&l)
                .map_err(|e| Error::BadRecord {
                    line: i + 1,
                    message: e.to_string(),
                })
                .and_then(|r| {
                    r.validate()
                        .map_err(|message| Error::BadRecord { line: i + 1, message })?;
                    Ok(r)
                }),
        ),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub oov_rate: f64,
    pub stopword_rate: f64,
    /// Tokens the mechanism ran on, over all tokens.
    pub sanitized_rate: f64,
    /// Tokens whose output differs from the input, over all tokens.
    pub replaced_rate: f64,
    /// Mean cosine similarity between original and replacement over replaced
    /// tokens; 1.0 when nothing was replaced.
    pub mean_cosine_similarity: f64,
    pub failed_records: usize,
}

/// Running totals behind [`CorpusStats`].
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    sentences: usize,
    tokens: usize,
    oov: usize,
    stopwords: usize,
    sanitized: usize,
    replaced: usize,
    cosine_sum: f64,
    failed: usize,
}

impl StatsAccumulator {
    pub fn add(&mut self, record: &SentenceRecord, table: &EmbeddingTable) {
        self.sentences += 1;
        self.tokens += record.len();
        for i in 0..record.len() {
            self.oov += record.oov_mask[i] as usize;
            self.stopwords += record.stopword_mask[i] as usize;
            if !record.evaluated(i) {
                continue;
            }
            self.sanitized += 1;
            let (orig, repl) = (&record.original_tokens[i], &record.sanitized_tokens[i]);
            if orig != repl {
                self.replaced += 1;
                if let (Some(a), Some(b)) = (table.id(orig), table.id(repl)) {
                    self.cosine_sum += 1.0 - table.cosine_distance(table.row(a), b);
                }
            }
        }
    }

    pub fn add_failure(&mut self) {
        self.failed += 1;
    }

    pub fn finish(&self) -> CorpusStats {
        let rate = |n: usize| {
            if self.tokens == 0 {
                0.0
            } else {
                n as f64 / self.tokens as f64
            }
        };
        CorpusStats {
            sentences: self.sentences,
            tokens: self.tokens,
            oov_rate: rate(self.oov),
            stopword_rate: rate(self.stopwords),
            sanitized_rate: rate(self.sanitized),
            replaced_rate: rate(self.replaced),
            mean_cosine_similarity: if self.replaced == 0 {
                1.0
            } else {
                self.cosine_sum / self.replaced as f64
            },
            failed_records: self.failed,
        }
    }
}

pub fn corpus_stats<'r>(records: impl IntoIterator<Item = &'r SentenceRecord>, table: &EmbeddingTable) -> CorpusStats {
    let mut acc = StatsAccumulator::default();
    records.into_iter().for_each(|r| acc.add(r, table));
    acc.finish()
}

#[derive(Clone, Copy, Debug)]
pub struct CorpusOptions {
    pub format: InputFormat,
    pub lowercase: bool,
    /// Sentences per nearest-neighbor batch.
    pub batch_size: usize,
    /// Fraction of records allowed to fail before the run is aborted.
    pub error_budget: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            format: InputFormat::Auto,
            lowercase: false,
            batch_size: 256,
            error_budget: 0.01,
        }
    }
}

/// Streams `input` through the sanitizer into `output`.
///
/// Record `k` of the input (counting every non-blank line) draws from random
/// stream `k`, so output is identical for any batch size or thread count.
/// Failing records are logged and skipped.
pub fn sanitize_corpus<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    sanitizer: &Sanitizer<'_>,
    options: &CorpusOptions,
) -> Result<CorpusStats> {
    let mut acc = StatsAccumulator::default();
    let mut total = 0usize;
    let mut batch: Vec<(u64, Result<InputRecord>)> = Vec::with_capacity(options.batch_size);
    let mut ordinal = 0u64;

    let mut flush = |batch: &mut Vec<(u64, Result<InputRecord>)>, acc: &mut StatsAccumulator| -> Result<()> {
        let mut ids = Vec::new();
        let mut sentences = Vec::new();
        let mut streams = Vec::new();
        for (k, rec) in batch.drain(..) {
            match rec {
                Ok(rec) => {
                    ids.push(rec.id.clone());
                    sentences.push(rec.into_tokens(options.lowercase));
                    streams.push(k);
                }
                Err(e) => {
                    log::warn!("skipping input record {k}: {e}");
                    acc.add_failure();
                }
            }
        }
        let results = sanitizer.sanitize_batch(&sentences, &streams);
        for (id, result) in ids.into_iter().zip(results) {
            match result {
                Ok(tokens) => {
                    let record = SentenceRecord::from_tokens(id, &tokens);
                    acc.add(&record, sanitizer.table());
                    serde_json::to_writer(&mut output, &record)?;
                    output.write_all(b"\n")?;
                }
                Err(e) => {
                    log::warn!("skipping record {id}: {e}");
                    acc.add_failure();
                }
            }
        }
        Ok(())
    };

    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        batch.push((ordinal, parse_input_line(&line, options.format, line_no + 1)));
        ordinal += 1;
        if batch.len() >= options.batch_size.max(1) {
            flush(&mut batch, &mut acc)?;
        }
    }
    flush(&mut batch, &mut acc)?;
    output.flush()?;

    let stats = acc.finish();
    if total > 0 && stats.failed_records as f64 > options.error_budget * total as f64 {
        return Err(Error::ErrorBudgetExceeded {
            failed: stats.failed_records,
            total,
        });
    }
    Ok(stats)
}
