//! Token embeddings, the lazily evaluated MaxSim matrix, and reveal accounting.
//!
//! [`MaxSimOracle`] is read-only after construction: evaluating a cell is a
//! pure function of the stored embeddings (or precomputed matrix). Cost is
//! charged by an [`ObservationLedger`], one per query run, which records each
//! revealed cell exactly once.

use serde::{Deserialize, Serialize};

use crate::bounds::RowStats;
use crate::rank::top_k_indices;
use crate::{Error, Result};

/// Tolerance on `||v|| = 1` for vectors used with cosine similarity.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    /// Cosine on pre-normalized vectors, evaluated as a dot product.
    Cosine,
    Dot,
}

/// Similarity selector plus the closed interval its values are known to lie in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub kind: SimilarityKind,
    pub range: (f64, f64),
}

impl Similarity {
    pub fn cosine() -> Self {
        Similarity {
            kind: SimilarityKind::Cosine,
            range: (-1.0, 1.0),
        }
    }

    pub fn dot(lo: f64, hi: f64) -> Result<Self> {
        Similarity {
            kind: SimilarityKind::Dot,
            range: (0.0, 0.0),
        }
        .with_range(lo, hi)
    }

    /// Dot product with the range `[-m, m]`, `m = max|q| * max|e|` (Cauchy-Schwarz).
    pub fn dot_bounded_by_norms(query: &QueryTokens, docs: &[DocTokens]) -> Self {
        let max_norm = |it: &mut dyn Iterator<Item = &[f32]>| it.map(norm).fold(0.0_f64, f64::max);
        let q = max_norm(&mut query.iter());
        let d = max_norm(&mut docs.iter().flat_map(|d| d.iter()));
        let m = q * d;
        Similarity {
            kind: SimilarityKind::Dot,
            range: (-m, m),
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!(
                "similarity range must be finite with lo <= hi, got [{lo}, {hi}]"
            )));
        }
        self.range = (lo, hi);
        Ok(self)
    }

    #[inline]
    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.range.0, self.range.1)
    }
}

impl Default for Similarity {
    fn default() -> Self {
        Similarity::cosine()
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Contiguous row-major storage of `count` vectors of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
struct TokenMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    fn new(dim: usize, data: Vec<f32>, what: &str) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config(format!("{what}: embedding dimension must be >= 1")));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::config(format!(
                "{what}: expected a non-empty multiple of dimension {dim} components, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("{what}: non-finite embedding component")));
        }
        Ok(TokenMatrix { dim, data })
    }

    fn from_vectors(vectors: Vec<Vec<f32>>, what: &str) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::config(format!("{what}: vectors have differing dimensions")));
        }
        TokenMatrix::new(dim, vectors.concat(), what)
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, j: usize) -> &[f32] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }
}

/// The `T` token embeddings of a query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryTokens(TokenMatrix);

impl QueryTokens {
    pub fn new(vectors: Vec<Vec<f32>>) -> Result<Self> {
        TokenMatrix::from_vectors(vectors, "query").map(QueryTokens)
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        TokenMatrix::new(dim, data, "query").map(QueryTokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn token(&self, t: usize) -> &[f32] {
        self.0.row(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.0.data.chunks_exact(self.0.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.0.data
    }
}

/// The `L_d` token embeddings of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocTokens {
    pub doc_id: String,
    tokens: TokenMatrix,
}

impl DocTokens {
    pub fn new(doc_id: impl Into<String>, vectors: Vec<Vec<f32>>) -> Result<Self> {
        let doc_id = doc_id.into();
        let tokens = TokenMatrix::from_vectors(vectors, &format!("document {doc_id}"))?;
        Ok(DocTokens { doc_id, tokens })
    }

    pub fn from_flat(doc_id: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        let doc_id = doc_id.into();
        let tokens = TokenMatrix::new(dim, data, &format!("document {doc_id}"))?;
        Ok(DocTokens { doc_id, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim
    }

    pub fn token(&self, j: usize) -> &[f32] {
        self.tokens.row(j)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.tokens.data.chunks_exact(self.tokens.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.tokens.data
    }

    /// `max_j sim(e_j, q)` before clamping to the similarity range.
    pub fn max_similarity(&self, q: &[f32]) -> f64 {
        self.iter().map(|e| dot(e, q)).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn check_normalized(what: &str, vectors: impl Iterator<Item = f64>) -> Result<()> {
    for (j, nrm) in vectors.enumerate() {
        if (nrm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::config(format!(
                "{what}: token {j} has norm {nrm}, cosine similarity requires unit vectors"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum Source {
    Embeddings { query: QueryTokens, docs: Vec<DocTokens> },
    Matrix { values: Vec<f32> },
}

/// Lazily evaluable `N x T` MaxSim matrix.
#[derive(Clone, Debug)]
pub struct MaxSimOracle {
    source: Source,
    sim: Similarity,
    n_docs: usize,
    n_tokens: usize,
}

impl MaxSimOracle {
    pub fn from_embeddings(query: QueryTokens, docs: Vec<DocTokens>, sim: Similarity) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::config("oracle needs at least one document"));
        }
        for d in &docs {
            if d.dim() != query.dim() {
                return Err(Error::config(format!(
                    "document {} has dimension {}, query has {}",
                    d.doc_id,
                    d.dim(),
                    query.dim()
                )));
            }
        }
        if sim.kind == SimilarityKind::Cosine {
            check_normalized("query", query.iter().map(norm))?;
            for d in &docs {
                check_normalized(&format!("document {}", d.doc_id), d.iter().map(norm))?;
            }
        }
        Ok(MaxSimOracle {
            n_docs: docs.len(),
            n_tokens: query.len(),
            source: Source::Embeddings { query, docs },
            sim,
        })
    }

    /// Wraps a precomputed row-major matrix whose values must lie in `range`.
    pub fn from_matrix(n_docs: usize, n_tokens: usize, values: Vec<f32>, range: (f64, f64)) -> Result<Self> {
        if n_docs == 0 || n_tokens == 0 {
            return Err(Error::config("matrix must have N >= 1 and T >= 1"));
        }
        if values.len() != n_docs * n_tokens {
            return Err(Error::config(format!(
                "matrix has {} values, expected {n_docs} x {n_tokens}",
                values.len()
            )));
        }
        let sim = Similarity {
            kind: SimilarityKind::Dot,
            range: (0.0, 0.0),
        }
        .with_range(range.0, range.1)?;
        if let Some((j, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v as f64 >= range.0 && v as f64 <= range.1))
        {
            return Err(Error::config(format!(
                "matrix cell ({}, {}) = {v} lies outside [{}, {}]",
                j / n_tokens,
                j % n_tokens,
                range.0,
                range.1
            )));
        }
        Ok(MaxSimOracle {
            source: Source::Matrix { values },
            sim,
            n_docs,
            n_tokens,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn similarity(&self) -> Similarity {
        self.sim
    }

    pub fn range(&self) -> (f64, f64) {
        self.sim.range
    }

    pub fn query(&self) -> Option<&QueryTokens> {
        match &self.source {
            Source::Embeddings { query, .. } => Some(query),
            Source::Matrix { .. } => None,
        }
    }

    pub fn docs(&self) -> Option<&[DocTokens]> {
        match &self.source {
            Source::Embeddings { docs, .. } => Some(docs),
            Source::Matrix { .. } => None,
        }
    }

    /// Precomputed values, when the oracle wraps a matrix.
    pub fn matrix_values(&self) -> Option<&[f32]> {
        match &self.source {
            Source::Matrix { values } => Some(values),
            Source::Embeddings { .. } => None,
        }
    }

    fn check_cell(&self, i: usize, t: usize) -> Result<()> {
        if i >= self.n_docs || t >= self.n_tokens {
            return Err(Error::usage(format!(
                "cell ({i}, {t}) outside {} x {} matrix",
                self.n_docs, self.n_tokens
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn cell(&self, i: usize, t: usize) -> f64 {
        match &self.source {
            Source::Matrix { values } => values[i * self.n_tokens + t] as f64,
            Source::Embeddings { query, docs } => self.sim.clamp(docs[i].max_similarity(query.token(t))),
        }
    }

    /// `h(d_i, t)`: the best similarity of query token `t` against any token of document `i`,
    /// clamped to the configured range.
    pub fn maxsim(&self, i: usize, t: usize) -> Result<f64> {
        self.check_cell(i, t)?;
        Ok(self.cell(i, t))
    }

    /// Exact row sum, accumulated over columns in order. Never charged.
    pub fn full_score(&self, i: usize) -> Result<f64> {
        self.check_cell(i, 0)?;
        Ok((0..self.n_tokens).map(|t| self.cell(i, t)).sum())
    }

    pub fn full_scores(&self) -> Vec<f64> {
        (0..self.n_docs)
            .map(|i| (0..self.n_tokens).map(|t| self.cell(i, t)).sum())
            .collect()
    }

    /// Ground-truth Top-K by full score, ties to the lower row index.
    pub fn exact_topk(&self, k: usize) -> Result<Vec<usize>> {
        if k > self.n_docs {
            return Err(Error::usage(format!("K = {k} exceeds N = {}", self.n_docs)));
        }
        Ok(top_k_indices(&self.full_scores(), k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// The revealed set with per-row statistics and the ordered reveal trace.
#[derive(Clone, Debug)]
pub struct ObservationLedger {
    n_docs: usize,
    n_tokens: usize,
    observed: Vec<bool>,
    values: Vec<f64>,
    rows: Vec<RowStats>,
    trace: Vec<Reveal>,
}

impl ObservationLedger {
    pub fn new(n_docs: usize, n_tokens: usize) -> Self {
        ObservationLedger {
            n_docs,
            n_tokens,
            observed: vec![false; n_docs * n_tokens],
            values: vec![0.0; n_docs * n_tokens],
            rows: vec![RowStats::default(); n_docs],
            trace: Vec::new(),
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    /// Charges one unit of cost and records `H[i][t]`. Each cell can be charged once.
    pub fn reveal(&mut self, oracle: &MaxSimOracle, i: usize, t: usize) -> Result<f64> {
        if oracle.n_docs() != self.n_docs || oracle.n_tokens() != self.n_tokens {
            return Err(Error::config(format!(
                "ledger is {} x {}, oracle is {} x {}",
                self.n_docs,
                self.n_tokens,
                oracle.n_docs(),
                oracle.n_tokens()
            )));
        }
        let value = oracle.maxsim(i, t)?;
        let idx = i * self.n_tokens + t;
        if self.observed[idx] {
            return Err(Error::usage(format!("cell ({i}, {t}) already revealed")));
        }
        self.observed[idx] = true;
        self.values[idx] = value;
        self.rows[i].push(value);
        self.trace.push(Reveal { row: i, col: t, value });
        Ok(value)
    }

    #[inline]
    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        self.observed[i * self.n_tokens + t]
    }

    pub fn value(&self, i: usize, t: usize) -> Option<f64> {
        self.is_observed(i, t).then(|| self.values[i * self.n_tokens + t])
    }

    pub fn row_stats(&self, i: usize) -> &RowStats {
        &self.rows[i]
    }

    pub fn observed_columns(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_tokens).filter(move |&t| self.is_observed(i, t))
    }

    pub fn unobserved_columns(&self, i: usize) -> Vec<usize> {
        (0..self.n_tokens).filter(|&t| !self.is_observed(i, t)).collect()
    }

    pub fn is_row_full(&self, i: usize) -> bool {
        self.rows[i].n() == self.n_tokens
    }

    /// `|Omega|`, which is also the number of charged reveals.
    pub fn revealed(&self) -> usize {
        self.trace.len()
    }

    pub fn is_full(&self) -> bool {
        self.revealed() == self.n_docs * self.n_tokens
    }

    pub fn coverage(&self) -> f64 {
        coverage(self.revealed(), self.n_docs, self.n_tokens)
    }

    pub fn trace(&self) -> &[Reveal] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<Reveal> {
        self.trace
    }
}

/// `|Omega| / (N * T)`.
pub fn coverage(revealed: usize, n_docs: usize, n_tokens: usize) -> f64 {
    let total = n_docs * n_tokens;
    if total == 0 {
        return 0.0;
    }
    revealed as f64 / total as f64
}
