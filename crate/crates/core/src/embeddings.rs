//! Embedding lookup table and exact cosine nearest-neighbor search.
//!
//! Rows are stored row-major in one contiguous `f64` buffer next to their
//! Euclidean norms. Nearest-neighbor queries are answered by an exhaustive
//! scan: the table is walked in row blocks and each block is multiplied
//! against the whole query batch with a small register-tiled kernel.
//!
//! Every query/row dot product is evaluated with the same fixed summation
//! order no matter how the work is tiled or split across threads, so batch
//! and single-query searches return bit-identical distances.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Index of a token in an [`EmbeddingTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One entry of a ranked neighbor list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: TokenId,
    /// Cosine distance, `1 - cos(query, row)`.
    pub distance: f64,
}

impl Neighbor {
    fn precedes(&self, other: &Neighbor) -> bool {
        match self.distance.total_cmp(&other.distance) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => self.id < other.id,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Keep at most this many rows.
    pub limit: Option<usize>,
    /// Scale every row to unit Euclidean norm.
    pub normalize: bool,
}

/// Vocabulary plus the `|V| x dim` embedding matrix.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    matrix: Vec<f64>,
    norms: Vec<f64>,
    /// `1 / norm`, or 0 for an all-zero row.
    inv_norms: Vec<f64>,
    dim: usize,
    normalized: bool,
    token_index: HashMap<String, TokenId>,
    duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from in-memory rows. Duplicate tokens keep their first row.
    pub fn from_rows<S, R>(rows: impl IntoIterator<Item = (S, R)>, normalize: bool) -> Result<Self>
    where
        S: Into<String>,
        R: AsRef<[f64]>,
    {
        let mut builder = Builder::default();
        for (i, (token, values)) in rows.into_iter().enumerate() {
            let values = values.as_ref();
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedLine(i + 1));
            }
            if builder.dim.is_some_and(|d| d != values.len()) {
                return Err(Error::MalformedLine(i + 1));
            }
            builder.dim = Some(values.len());
            builder.push(token.into(), values);
        }
        builder.finish(normalize)
    }

    /// Reads a GloVe-format text stream: one `token v1 v2 ... vd` entry per line.
    pub fn load<R: BufRead>(mut reader: R, options: LoadOptions) -> Result<Self> {
        let mut builder = Builder::default();
        let mut line = String::new();
        let mut values = Vec::new();
        let mut line_no = 0usize;
        loop {
            if options.limit.is_some_and(|limit| builder.tokens.len() >= limit) {
                break;
            }
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            line_no += 1;
            let text = line.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let mut fields = text.split(' ');
            let token = fields.next().unwrap_or_default();
            values.clear();
            for field in fields {
                if field.is_empty() {
                    continue;
                }
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => return Err(Error::MalformedLine(line_no)),
                }
            }
            match builder.dim {
                None if values.is_empty() => return Err(Error::MalformedLine(line_no)),
                None => builder.dim = Some(values.len()),
                Some(d) if d != values.len() => return Err(Error::MalformedLine(line_no)),
                Some(_) => {}
            }
            builder.push(token.to_string(), &values);
        }
        builder.finish(options.normalize)
    }

    pub fn load_path(path: impl AsRef<Path>, options: LoadOptions) -> Result<Self> {
        let file = File::open(path)?;
        Self::load(BufReader::with_capacity(1 << 20, file), options)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Number of duplicate entries dropped while building the table.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_index.get(token).copied()
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        let start = id.index() * self.dim;
        &self.matrix[start..start + self.dim]
    }

    pub fn norm(&self, id: TokenId) -> f64 {
        self.norms[id.index()]
    }

    /// The stored row for `token`, or `None` when it is out of vocabulary.
    pub fn embed(&self, token: &str) -> Option<&[f64]> {
        self.id(token).map(|id| self.row(id))
    }

    /// A copy of this table with every row scaled to unit norm.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.normalize_rows();
        out
    }

    fn normalize_rows(&mut self) {
        for (row, norm) in self.matrix.chunks_exact_mut(self.dim).zip(&mut self.norms) {
            if *norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= *norm);
                *norm = l2_norm(row);
            }
        }
        self.inv_norms = self.norms.iter().map(|&n| inverse(n)).collect();
        self.normalized = true;
    }

    /// Cosine distance between a query and one row.
    pub fn cosine_distance(&self, query: &[f64], id: TokenId) -> f64 {
        let qn = l2_norm(query);
        distance_from_dot(dot(query, self.row(id)), inverse(qn), self.inv_norms[id.index()])
    }

    /// The `k` rows closest to `query` in cosine distance, ascending, with ties
    /// broken by lower id. Ids in `exclude` are skipped.
    pub fn nearest_neighbors(&self, query: &[f64], k: usize, exclude: &[TokenId]) -> Result<Vec<Neighbor>> {
        self.nearest_batch(&[Query::new(query, exclude)], k, Exec::Sequential)
            .pop()
            .expect("one result per query")
    }

    /// Answers a batch of queries with one pass over the table.
    ///
    /// Results are returned in query order. The output does not depend on
    /// `exec` or on the batch composition.
    pub fn nearest_batch(&self, queries: &[Query<'_>], k: usize, exec: Exec) -> Vec<Result<Vec<Neighbor>>> {
        let mut prepared = Vec::with_capacity(queries.len());
        let mut slots = Vec::with_capacity(queries.len());
        let mut results: Vec<Result<Vec<Neighbor>>> = Vec::with_capacity(queries.len());
        for q in queries {
            match self.check_query(q.vector) {
                Ok(norm) => {
                    slots.push(Some(prepared.len()));
                    prepared.push(Prepared {
                        vector: q.vector,
                        inv_norm: inverse(norm),
                        exclude: q.exclude,
                    });
                    results.push(Ok(Vec::new()));
                }
                Err(e) => {
                    slots.push(None);
                    results.push(Err(e));
                }
            }
        }
        if k == 0 || prepared.is_empty() {
            return results;
        }

        let n = self.len();
        let span = scan_span(n, prepared.len(), exec);
        let ranges: Vec<(usize, usize)> = (0..n).step_by(span).map(|s| (s, (s + span).min(n))).collect();
        let partials = par::map_slice(exec, &ranges, |&(lo, hi)| self.scan_range(&prepared, k, lo, hi));

        let mut merged: Vec<TopK> = (0..prepared.len()).map(|_| TopK::new(k)).collect();
        for partial in partials {
            for (acc, part) in merged.iter_mut().zip(partial) {
                for nb in part.items {
                    acc.offer(nb);
                }
            }
        }
        let mut merged = merged.into_iter();
        for (slot, result) in slots.iter().zip(results.iter_mut()) {
            if slot.is_some() {
                *result = Ok(merged.next().expect("prepared query").items);
            }
        }
        results
    }

    /// Cosine distances from `query` to every row, in id order.
    pub fn distances_to_all(&self, query: &[f64]) -> Result<Vec<f64>> {
        let qn = self.check_query(query)?;
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .zip(&self.inv_norms)
            .map(|(row, &ir)| distance_from_dot(dot(query, row), inverse(qn), ir))
            .collect())
    }

    fn check_query(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let norm = l2_norm(query);
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::ZeroQuery);
        }
        Ok(norm)
    }

    fn scan_range(&self, queries: &[Prepared<'_>], k: usize, lo: usize, hi: usize) -> Vec<TopK> {
        let mut tops: Vec<TopK> = (0..queries.len()).map(|_| TopK::new(k)).collect();
        let dim = self.dim;
        let mut dots = [[0.0f64; ROW_BLOCK]; QUERY_TILE];
        let mut block_start = lo;
        while block_start < hi {
            let block_end = (block_start + ROW_BLOCK).min(hi);
            let inv_rows = &self.inv_norms[block_start..block_end];
            let mut qi = 0;
            while qi < queries.len() {
                let qt = (queries.len() - qi).min(QUERY_TILE);
                let tile = &queries[qi..qi + qt];
                let mut r = block_start;
                while r < block_end {
                    let rt = (block_end - r).min(ROW_TILE);
                    let mut out = [[0.0f64; ROW_TILE]; QUERY_TILE];
                    tile_dots(tile, &self.matrix[r * dim..(r + rt) * dim], dim, &mut out);
                    for a in 0..qt {
                        dots[a][r - block_start..r - block_start + rt].copy_from_slice(&out[a][..rt]);
                    }
                    r += rt;
                }
                for (a, q) in tile.iter().enumerate() {
                    let top = &mut tops[qi + a];
                    let mut worst = top.threshold();
                    for (b, (&d, &ir)) in dots[a].iter().zip(inv_rows).enumerate() {
                        let distance = distance_from_dot(d, q.inv_norm, ir);
                        if distance > worst {
                            continue;
                        }
                        let nb = Neighbor {
                            id: TokenId((block_start + b) as u32),
                            distance,
                        };
                        if top.admits(&nb) && !q.exclude.contains(&nb.id) {
                            top.offer(nb);
                            worst = top.threshold();
                        }
                    }
                }
                qi += qt;
            }
            block_start = block_end;
        }
        tops
    }
}

/// A query vector plus the ids it must not return.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub vector: &'a [f64],
    pub exclude: &'a [TokenId],
}

impl<'a> Query<'a> {
    pub fn new(vector: &'a [f64], exclude: &'a [TokenId]) -> Self {
        Self { vector, exclude }
    }
}

struct Prepared<'a> {
    vector: &'a [f64],
    inv_norm: f64,
    exclude: &'a [TokenId],
}

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    matrix: Vec<f64>,
    dim: Option<usize>,
    token_index: HashMap<String, TokenId>,
    duplicates: usize,
}

impl Builder {
    fn push(&mut self, token: String, values: &[f64]) {
        if self.token_index.contains_key(&token) {
            self.duplicates += 1;
            return;
        }
        let id = TokenId(self.tokens.len() as u32);
        self.token_index.insert(token.clone(), id);
        self.tokens.push(token);
        self.matrix.extend_from_slice(values);
    }

    fn finish(self, normalize: bool) -> Result<EmbeddingTable> {
        let dim = match self.dim {
            Some(d) if !self.tokens.is_empty() => d,
            _ => return Err(Error::EmptyTable),
        };
        if self.duplicates > 0 {
            log::warn!("skipped {} duplicate vocabulary entries", self.duplicates);
        }
        let norms: Vec<f64> = self.matrix.chunks_exact(dim).map(l2_norm).collect();
        let inv_norms = norms.iter().map(|&n| inverse(n)).collect();
        let mut table = EmbeddingTable {
            tokens: self.tokens,
            matrix: self.matrix,
            norms,
            inv_norms,
            dim,
            normalized: false,
            token_index: self.token_index,
            duplicates: self.duplicates,
        };
        if normalize {
            table.normalize_rows();
        }
        Ok(table)
    }
}

/// Bounded best-k list ordered by `(distance, id)`.
#[derive(Clone, Debug)]
struct TopK {
    k: usize,
    items: Vec<Neighbor>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// Distances above this cannot enter the list.
    #[inline]
    fn threshold(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].distance
        }
    }

    #[inline]
    fn admits(&self, nb: &Neighbor) -> bool {
        self.items.len() < self.k || nb.precedes(self.items.last().expect("k > 0"))
    }

    fn offer(&mut self, nb: Neighbor) {
        if !self.admits(&nb) {
            return;
        }
        let pos = self.items.partition_point(|x| x.precedes(&nb));
        self.items.insert(pos, nb);
        self.items.truncate(self.k);
    }
}

const LANES: usize = 8;
const QUERY_TILE: usize = 4;
const ROW_TILE: usize = 4;
const ROW_BLOCK: usize = 64;

/// Rows handled per work item. Large enough that a range amortizes the
/// per-range top-k state, small enough to balance across workers.
fn scan_span(rows: usize, queries: usize, exec: Exec) -> usize {
    let workers = par::workers(exec);
    if workers <= 1 {
        return rows.max(1);
    }
    let by_workers = rows.div_ceil(workers * 4);
    let floor = (1 << 16) / queries.clamp(1, 64);
    by_workers.max(floor).max(ROW_BLOCK)
}

/// Euclidean norm with the crate's fixed summation order.
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline(always)]
fn inverse(norm: f64) -> f64 {
    if norm > 0.0 {
        1.0 / norm
    } else {
        0.0
    }
}

/// Every distance in the crate goes through here, so all paths agree bitwise.
/// A zero row has inverse norm 0 and therefore distance 1.
#[inline(always)]
fn distance_from_dot(dot: f64, inv_query: f64, inv_row: f64) -> f64 {
    1.0 - dot * inv_query * inv_row
}

#[inline(always)]
fn reduce(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Dot product with `LANES` interleaved partial sums followed by a scalar tail.
///
/// [`tile_dots`] evaluates each pair with exactly this sequence of operations.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % LANES;
    let mut acc = [0.0f64; LANES];
    for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    reduce(&acc) + tail
}

/// Dot products of up to `QUERY_TILE` queries against up to `ROW_TILE` rows.
#[inline]
fn tile_dots(queries: &[Prepared<'_>], rows: &[f64], dim: usize, out: &mut [[f64; ROW_TILE]; QUERY_TILE]) {
    if queries.len() == QUERY_TILE && rows.len() == ROW_TILE * dim {
        let qs = std::array::from_fn(|a| queries[a].vector);
        let rs = std::array::from_fn(|b| &rows[b * dim..(b + 1) * dim]);
        *out = full_tile(qs, rs, dim);
        return;
    }
    for (a, q) in queries.iter().enumerate() {
        for (b, row) in rows.chunks_exact(dim).enumerate() {
            out[a][b] = dot(q.vector, row);
        }
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
#[inline(always)]
fn lanes(s: &[f64]) -> &[f64; LANES] {
    s.try_into().expect("chunk of LANES values")
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
#[inline(always)]
fn full_tile(qs: [&[f64]; QUERY_TILE], rs: [&[f64]; ROW_TILE], dim: usize) -> [[f64; ROW_TILE]; QUERY_TILE] {
    use std::arch::x86_64::*;
    let split = dim - dim % LANES;
    let mut acc = [[[0.0f64; LANES]; ROW_TILE]; QUERY_TILE];
    // SAFETY: each load reads LANES values at offset c < split <= slice length,
    // and avx512f is enabled for the whole build by the cfg above.
    unsafe {
        let mut v = [[_mm512_setzero_pd(); ROW_TILE]; QUERY_TILE];
        let qp = qs.map(<[f64]>::as_ptr);
        let rp = rs.map(<[f64]>::as_ptr);
        let mut c = 0;
        while c < split {
            let r = rp.map(|p| _mm512_loadu_pd(p.add(c)));
            for a in 0..QUERY_TILE {
                let q = _mm512_loadu_pd(qp[a].add(c));
                for b in 0..ROW_TILE {
                    v[a][b] = _mm512_add_pd(v[a][b], _mm512_mul_pd(q, r[b]));
                }
            }
            c += LANES;
        }
        for a in 0..QUERY_TILE {
            for b in 0..ROW_TILE {
                _mm512_storeu_pd(acc[a][b].as_mut_ptr(), v[a][b]);
            }
        }
    }
    finish_tile(&acc, qs, rs, split, dim)
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
#[inline(always)]
fn full_tile(qs: [&[f64]; QUERY_TILE], rs: [&[f64]; ROW_TILE], dim: usize) -> [[f64; ROW_TILE]; QUERY_TILE] {
    let split = dim - dim % LANES;
    let mut acc = [[[0.0f64; LANES]; ROW_TILE]; QUERY_TILE];
    let mut c = 0;
    while c < split {
        for (a, q) in qs.iter().enumerate() {
            let q = lanes(&q[c..c + LANES]);
            for (b, r) in rs.iter().enumerate() {
                let r = lanes(&r[c..c + LANES]);
                for l in 0..LANES {
                    acc[a][b][l] += q[l] * r[l];
                }
            }
        }
        c += LANES;
    }
    finish_tile(&acc, qs, rs, split, dim)
}

#[inline(always)]
fn finish_tile(
    acc: &[[[f64; LANES]; ROW_TILE]; QUERY_TILE],
    qs: [&[f64]; QUERY_TILE],
    rs: [&[f64]; ROW_TILE],
    split: usize,
    dim: usize,
) -> [[f64; ROW_TILE]; QUERY_TILE] {
    let mut out = [[0.0f64; ROW_TILE]; QUERY_TILE];
    for a in 0..QUERY_TILE {
        for b in 0..ROW_TILE {
            let mut tail = 0.0;
            for j in split..dim {
                tail += qs[a][j] * rs[b][j];
            }
            out[a][b] = reduce(&acc[a][b]) + tail;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "a 1.0 0.0\nb 0.0 1.0\nc -1.0 0.0";

    fn toy(normalize: bool) -> EmbeddingTable {
        EmbeddingTable::load(TOY.as_bytes(), LoadOptions { limit: None, normalize }).unwrap()
    }

    fn ids(nbs: &[Neighbor]) -> Vec<u32> {
        nbs.iter().map(|n| n.id.0).collect()
    }

    #[test]
    fn parses_toy_table() {
        let t = toy(false);
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.row(TokenId(0)), &[1.0, 0.0]);
        assert_eq!(t.row(TokenId(1)), &[0.0, 1.0]);
        assert_eq!(t.row(TokenId(2)), &[-1.0, 0.0]);
        assert!(!t.is_normalized());
    }

    #[test]
    fn arity_mismatch_reports_line() {
        let err = EmbeddingTable::load("a 1.0 0.0\nb 0.5".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine(2)), "{err:?}");
        let err = EmbeddingTable::load(
            "a 1.0 0.0\nb 0.5 x".as_bytes(),
            LoadOptions {
                limit: None,
                normalize: true,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedLine(2)));
    }

    #[test]
    fn rejects_non_finite_values() {
        let err = EmbeddingTable::load("a 1.0 nan".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine(1)));
    }

    #[test]
    fn limit_truncates() {
        let t = EmbeddingTable::load(
            TOY.as_bytes(),
            LoadOptions {
                limit: Some(2),
                normalize: false,
            },
        )
        .unwrap();
        assert_eq!(t.tokens(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn empty_stream() {
        assert!(matches!(
            EmbeddingTable::load("\n\n".as_bytes(), LoadOptions::default()),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn windows_line_endings_and_blank_lines() {
        let t = EmbeddingTable::load("a 1 0\r\n\r\nb 0 1\r\n".as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.embed("b"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn duplicates_keep_first() {
        let t = EmbeddingTable::load("a 1 0\nb 0 1\na 5 5\n".as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.duplicates(), 1);
        assert_eq!(t.embed("a"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn embed_and_oov() {
        let t = toy(false);
        assert_eq!(t.embed("b"), Some(&[0.0, 1.0][..]));
        assert_eq!(t.embed("zzz"), None);
        assert_eq!(toy(true).embed("a"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn normalization_scales_rows() {
        let t = EmbeddingTable::load(
            "a 3 4\nb 0 2\n".as_bytes(),
            LoadOptions {
                limit: None,
                normalize: true,
            },
        )
        .unwrap();
        assert_eq!(t.embed("a"), Some(&[0.6, 0.8][..]));
        assert!((t.norm(TokenId(1)) - 1.0).abs() < 1e-12);
        let again = t.normalized();
        for id in 0..2 {
            for (x, y) in t.row(TokenId(id)).iter().zip(again.row(TokenId(id))) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn toy_neighbors() {
        let t = toy(false);
        let nbs = t.nearest_neighbors(&[0.9, 0.1], 2, &[]).unwrap();
        assert_eq!(ids(&nbs), vec![0, 1]);
        let nbs = t.nearest_neighbors(&[0.9, 0.1], 2, &[TokenId(0)]).unwrap();
        assert_eq!(ids(&nbs), vec![1, 2]);
        let nbs = t.nearest_neighbors(&[1.0, 0.0], 10, &[]).unwrap();
        assert_eq!(ids(&nbs), vec![0, 1, 2]);
        assert_eq!(nbs[0].distance, 0.0);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let t = toy(false);
        let nbs = t.nearest_neighbors(&[0.0, 0.45186], 3, &[TokenId(1)]).unwrap();
        assert_eq!(ids(&nbs), vec![0, 2]);
        assert_eq!(nbs[0].distance, nbs[1].distance);
    }

    #[test]
    fn zero_query_rejected() {
        let t = toy(false);
        assert!(matches!(
            t.nearest_neighbors(&[0.0, 1e-13], 1, &[]),
            Err(Error::ZeroQuery)
        ));
        assert!(matches!(
            t.nearest_neighbors(&[1.0], 1, &[]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn batch_keeps_errors_in_place() {
        let t = toy(false);
        let queries = [
            Query::new(&[1.0, 0.0], &[]),
            Query::new(&[0.0, 0.0], &[]),
            Query::new(&[0.0, 1.0], &[]),
        ];
        let out = t.nearest_batch(&queries, 1, Exec::Parallel);
        assert_eq!(ids(out[0].as_ref().unwrap()), vec![0]);
        assert!(matches!(out[1], Err(Error::ZeroQuery)));
        assert_eq!(ids(out[2].as_ref().unwrap()), vec![1]);
    }

    #[test]
    fn tiled_dots_match_scalar_dot() {
        let dim = 21;
        let rows: Vec<f64> = (0..ROW_TILE * dim)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13)
            .collect();
        let qv: Vec<Vec<f64>> = (0..QUERY_TILE)
            .map(|a| {
                (0..dim)
                    .map(|j| (((a + 3) * (j + 1) * 17 % 13) as f64 - 6.0) * 0.07)
                    .collect()
            })
            .collect();
        let qs: Vec<Prepared> = qv
            .iter()
            .map(|v| Prepared {
                vector: v,
                inv_norm: 1.0,
                exclude: &[],
            })
            .collect();
        let mut out = [[0.0; ROW_TILE]; QUERY_TILE];
        tile_dots(&qs, &rows, dim, &mut out);
        for a in 0..QUERY_TILE {
            for b in 0..ROW_TILE {
                assert_eq!(
                    out[a][b].to_bits(),
                    dot(&qv[a], &rows[b * dim..(b + 1) * dim]).to_bits()
                );
            }
        }
    }
}
