//! Two-stage retrieval: exact per-token kNN candidate generation, then
//! per-cell upper bounds for the reranking stage.
//!
//! For every query token the `k'` most similar corpus tokens are found by a
//! full scan. A document becomes a candidate when any of its tokens is among
//! those neighbours. For cell `(i, t)` the upper bound is the exact MaxSim when
//! document `i` surfaced for token `t`, and the `k'`-th neighbour similarity
//! otherwise: any token that did not make the list scores at most that much.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::CellBounds;
use crate::oracle::{dot, DocTokens, MaxSimOracle, QueryTokens, Similarity};
use crate::{Error, Result};

pub const DEFAULT_K_PRIME: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Index into the corpus.
    pub doc: usize,
    /// Token index within that document.
    pub token: usize,
    pub similarity: f64,
}

impl Neighbor {
    /// Better neighbours sort first: higher similarity, then lower `(doc, token)`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.doc.cmp(&other.doc))
            .then(self.token.cmp(&other.token))
    }
}

// Max-heap keyed on "worse", so the heap top is the neighbour to evict.
struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Per query token, the best `k'` corpus tokens in descending similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenNeighborList {
    pub k_prime: usize,
    pub lists: Vec<Vec<Neighbor>>,
}

impl TokenNeighborList {
    /// `s_k'` for token `t`: the similarity of the last retained neighbour.
    pub fn kth_similarity(&self, t: usize) -> Option<f64> {
        self.lists.get(t)?.last().map(|n| n.similarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    /// Corpus indices of the candidates, ascending.
    pub docs: Vec<usize>,
    pub doc_ids: Vec<String>,
    /// Row-major `N x T`: exact MaxSim for pairs surfaced by the kNN stage.
    pub retrieved: Vec<Option<f64>>,
    pub n_tokens: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn retrieved(&self, row: usize, t: usize) -> Option<f64> {
        self.retrieved[row * self.n_tokens + t]
    }
}

fn knn_for_token(corpus: &[DocTokens], q: &[f32], k_prime: usize, sim: Similarity) -> Vec<Neighbor> {
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k_prime + 1);
    for (doc, d) in corpus.iter().enumerate() {
        for (token, e) in d.iter().enumerate() {
            let cand = Neighbor {
                doc,
                token,
                similarity: dot(e, q).clamp(sim.range.0, sim.range.1),
            };
            if heap.len() < k_prime {
                heap.push(Worst(cand));
            } else if let Some(top) = heap.peek() {
                if cand.rank_cmp(&top.0) == Ordering::Less {
                    heap.pop();
                    heap.push(Worst(cand));
                }
            }
        }
    }
    let mut list: Vec<Neighbor> = heap.into_iter().map(|w| w.0).collect();
    list.sort_by(Neighbor::rank_cmp);
    list
}

/// Exact per-token top-`k'` over all corpus tokens and the union of owning documents.
pub fn generate_candidates(
    corpus: &[DocTokens],
    query: &QueryTokens,
    k_prime: usize,
    sim: Similarity,
) -> Result<(CandidateSet, TokenNeighborList)> {
    if corpus.is_empty() {
        return Err(Error::usage("candidate generation needs a non-empty corpus"));
    }
    if k_prime == 0 {
        return Err(Error::usage("k' must be >= 1"));
    }
    if let Some(d) = corpus.iter().find(|d| d.dim() != query.dim()) {
        return Err(Error::config(format!(
            "document {} has dimension {}, query has {}",
            d.doc_id,
            d.dim(),
            query.dim()
        )));
    }
    let t_count = query.len();
    let lists: Vec<Vec<Neighbor>> = (0..t_count)
        .into_par_iter()
        .map(|t| knn_for_token(corpus, query.token(t), k_prime, sim))
        .collect();

    let mut docs: Vec<usize> = lists.iter().flatten().map(|n| n.doc).collect();
    docs.sort_unstable();
    docs.dedup();

    let mut row_of = vec![usize::MAX; corpus.len()];
    for (row, &doc) in docs.iter().enumerate() {
        row_of[doc] = row;
    }
    let mut retrieved = vec![None; docs.len() * t_count];
    for (t, list) in lists.iter().enumerate() {
        for nb in list {
            let cell = &mut retrieved[row_of[nb.doc] * t_count + t];
            if cell.is_none() {
                let h = corpus[nb.doc].max_similarity(query.token(t));
                *cell = Some(h.clamp(sim.range.0, sim.range.1));
            }
        }
    }
    let candidates = CandidateSet {
        doc_ids: docs.iter().map(|&d| corpus[d].doc_id.clone()).collect(),
        docs,
        retrieved,
        n_tokens: t_count,
    };
    Ok((candidates, TokenNeighborList { k_prime, lists }))
}

/// Cell bounds from the kNN stage: `[lower, h(d_i, t)]` for surfaced pairs,
/// `[lower, s_k'(t)]` otherwise. Nothing is revealed.
pub fn derive_bounds(candidates: &CandidateSet, neighbors: &TokenNeighborList, lower: f64) -> Result<CellBounds> {
    let (n, t_count) = (candidates.len(), candidates.n_tokens);
    let mut hi = Vec::with_capacity(n * t_count);
    for row in 0..n {
        for t in 0..t_count {
            let b = match candidates.retrieved(row, t) {
                Some(h) => h,
                None => neighbors
                    .kth_similarity(t)
                    .ok_or_else(|| Error::usage(format!("token {t} has an empty neighbour list")))?,
            };
            hi.push(b.max(lower));
        }
    }
    CellBounds::from_parts(n, t_count, vec![lower; n * t_count], hi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsMode {
    /// Per-cell bounds from the kNN stage.
    #[default]
    Ann,
    /// The similarity range for every cell.
    Generic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Similarities are clamped at 0 so that the lower bound 0 is sound.
    #[default]
    Clamp,
    /// Negative similarities are kept and the lower bound is the range minimum.
    Range,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineSettings {
    pub k_prime: usize,
    pub bounds: BoundsMode,
    pub negatives: NegativeMode,
    pub sim: Similarity,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            k_prime: DEFAULT_K_PRIME,
            bounds: BoundsMode::Ann,
            negatives: NegativeMode::Clamp,
            sim: Similarity::cosine(),
        }
    }
}

impl PipelineSettings {
    /// The similarity actually used by both stages (clamped at 0 in clamp mode).
    pub fn effective_similarity(&self) -> Similarity {
        match self.negatives {
            NegativeMode::Clamp => Similarity {
                range: (self.sim.range.0.max(0.0), self.sim.range.1.max(0.0)),
                ..self.sim
            },
            NegativeMode::Range => self.sim,
        }
    }
}

/// Everything the reranking stage needs for one query.
#[derive(Clone, Debug)]
pub struct Stage2 {
    pub oracle: MaxSimOracle,
    pub bounds: CellBounds,
    pub candidates: CandidateSet,
    pub neighbors: TokenNeighborList,
}

impl Stage2 {
    pub fn doc_ids(&self) -> &[String] {
        &self.candidates.doc_ids
    }

    pub fn artifact(&self, query_id: &str) -> CandidateArtifact {
        let (n, t) = (self.bounds.n_docs(), self.bounds.n_tokens());
        let rows = |v: &[f64]| (0..n).map(|i| v[i * t..(i + 1) * t].to_vec()).collect();
        let sim = self.oracle.similarity();
        CandidateArtifact {
            query_id: query_id.to_string(),
            query_path: None,
            corpus_manifest: None,
            k_prime: self.neighbors.k_prime,
            similarity: sim.kind,
            range: [sim.range.0, sim.range.1],
            doc_ids: self.candidates.doc_ids.clone(),
            s_kprime: (0..t)
                .map(|tt| self.neighbors.kth_similarity(tt).unwrap_or(f64::NAN))
                .collect(),
            lo: rows(self.bounds.lo_values()),
            hi: rows(self.bounds.hi_values()),
        }
    }
}

/// Runs candidate generation and builds the reranking oracle and bounds.
pub fn prepare(corpus: &[DocTokens], query: &QueryTokens, settings: &PipelineSettings) -> Result<Stage2> {
    let sim = settings.effective_similarity();
    let (candidates, neighbors) = generate_candidates(corpus, query, settings.k_prime, sim)?;
    let docs: Vec<DocTokens> = candidates.docs.iter().map(|&d| corpus[d].clone()).collect();
    let oracle = MaxSimOracle::from_embeddings(query.clone(), docs, sim)?;
    let bounds = match settings.bounds {
        BoundsMode::Ann => derive_bounds(&candidates, &neighbors, sim.range.0)?,
        BoundsMode::Generic => CellBounds::uniform(oracle.n_docs(), oracle.n_tokens(), sim.range.0, sim.range.1)?,
    };
    Ok(Stage2 {
        oracle,
        bounds,
        candidates,
        neighbors,
    })
}

/// JSON artifact describing one query's candidate set and per-cell bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateArtifact {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_manifest: Option<String>,
    pub k_prime: usize,
    pub similarity: crate::oracle::SimilarityKind,
    pub range: [f64; 2],
    pub doc_ids: Vec<String>,
    pub s_kprime: Vec<f64>,
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::rng;

    fn unit(v: Vec<f64>) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    fn random_unit(r: &mut rng::RunRng, dim: usize) -> Vec<f32> {
        unit((0..dim).map(|_| StandardNormal.sample(r)).collect())
    }

    fn random_corpus(seed: u64, docs: usize, tokens: usize, dim: usize) -> (QueryTokens, Vec<DocTokens>) {
        let mut r = rng::stream(seed, 0);
        let q = QueryTokens::new((0..2).map(|_| random_unit(&mut r, dim)).collect()).unwrap();
        let corpus = (0..docs)
            .map(|d| {
                let len = r.random_range(1..=tokens);
                DocTokens::new(format!("d{d}"), (0..len).map(|_| random_unit(&mut r, dim)).collect()).unwrap()
            })
            .collect();
        (q, corpus)
    }

    #[test]
    fn single_document_corpus() {
        let (q, corpus) = random_corpus(1, 1, 3, 4);
        for k_prime in [1, 2, 10] {
            let (c, _) = generate_candidates(&corpus, &q, k_prime, Similarity::cosine()).unwrap();
            assert_eq!(c.doc_ids, vec!["d0".to_string()]);
        }
    }

    #[test]
    fn exhaustive_k_prime_takes_every_document() {
        let (q, corpus) = random_corpus(2, 6, 4, 5);
        let total: usize = corpus.iter().map(|d| d.len()).sum();
        let (c, nb) = generate_candidates(&corpus, &q, total + 3, Similarity::cosine()).unwrap();
        assert_eq!(c.docs, (0..6).collect::<Vec<_>>());
        assert!(nb.lists.iter().all(|l| l.len() == total));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let q = QueryTokens::new(vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            generate_candidates(&[], &q, 3, Similarity::cosine()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn small_corpus_matches_exhaustive_table() {
        // 3 docs x 2 tokens, 2 query tokens, k' = 1
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let q = QueryTokens::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let corpus = vec![
            DocTokens::new("a", vec![vec![0.6, 0.8], vec![-1.0, 0.0]]).unwrap(),
            DocTokens::new("b", vec![vec![s, s], vec![0.8, -0.6]]).unwrap(),
            DocTokens::new("c", vec![vec![0.0, -1.0], vec![0.28, 0.96]]).unwrap(),
        ];
        // brute-force: every (query token, corpus token) similarity
        let mut table = Vec::new();
        for t in 0..2 {
            for (d, doc) in corpus.iter().enumerate() {
                for j in 0..2 {
                    table.push((t, d, j, dot(doc.token(j), q.token(t))));
                }
            }
        }
        let best = |t: usize| {
            table
                .iter()
                .filter(|e| e.0 == t)
                .max_by(|a, b| a.3.total_cmp(&b.3).then(b.1.cmp(&a.1)))
                .copied()
                .unwrap()
        };
        let (c, nb) = generate_candidates(&corpus, &q, 1, Similarity::cosine()).unwrap();
        for t in 0..2 {
            let (_, d, j, v) = best(t);
            assert_eq!(nb.lists[t].len(), 1);
            assert_eq!((nb.lists[t][0].doc, nb.lists[t][0].token), (d, j));
            assert!((nb.lists[t][0].similarity - v).abs() < 1e-12);
        }
        // token 0 -> b (0.8), token 1 -> c (0.96)
        assert_eq!(c.doc_ids, vec!["b".to_string(), "c".to_string()]);
    }

    #[test]
    fn derive_bounds_uses_exact_or_kth_similarity() {
        let mut r = rng::stream(4, 0);
        let q = QueryTokens::new(vec![random_unit(&mut r, 6), random_unit(&mut r, 6)]).unwrap();
        let (_, corpus) = random_corpus(4, 12, 3, 6);
        let (c, nb) = generate_candidates(&corpus, &q, 3, Similarity::cosine()).unwrap();
        let b = derive_bounds(&c, &nb, -1.0).unwrap();
        for row in 0..c.len() {
            for t in 0..2 {
                match c.retrieved(row, t) {
                    Some(h) => assert_eq!(b.hi(row, t), h),
                    None => assert_eq!(b.hi(row, t), nb.kth_similarity(t).unwrap()),
                }
                assert_eq!(b.lo(row, t), -1.0);
            }
        }
    }

    #[test]
    fn generic_mode_uses_similarity_range() {
        let (q, corpus) = random_corpus(5, 8, 4, 6);
        let settings = PipelineSettings {
            bounds: BoundsMode::Generic,
            negatives: NegativeMode::Range,
            ..Default::default()
        };
        let s2 = prepare(&corpus, &q, &settings).unwrap();
        assert!(s2.bounds.lo_values().iter().all(|&v| v == -1.0));
        assert!(s2.bounds.hi_values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ann_bounds_are_sound_in_both_negative_modes() {
        for seed in 0..30 {
            let (q, corpus) = random_corpus(seed, 10, 5, 4);
            for negatives in [NegativeMode::Clamp, NegativeMode::Range] {
                for k_prime in [1, 3, 10] {
                    let settings = PipelineSettings {
                        k_prime,
                        negatives,
                        ..Default::default()
                    };
                    let s2 = prepare(&corpus, &q, &settings).unwrap();
                    assert!(
                        s2.bounds.violations(&s2.oracle).is_empty(),
                        "seed {seed} {negatives:?} k'={k_prime}"
                    );
                }
            }
        }
    }

    #[test]
    fn larger_k_prime_never_shrinks_candidates_or_undercuts_truth() {
        for seed in 0..20 {
            let (q, corpus) = random_corpus(100 + seed, 15, 4, 5);
            let mut prev: Vec<usize> = Vec::new();
            for k_prime in 1..12 {
                let settings = PipelineSettings {
                    k_prime,
                    ..Default::default()
                };
                let s2 = prepare(&corpus, &q, &settings).unwrap();
                assert!(prev.iter().all(|d| s2.candidates.docs.contains(d)));
                assert!(s2.bounds.violations(&s2.oracle).is_empty());
                prev = s2.candidates.docs.clone();
            }
        }
    }

    #[test]
    fn neighbor_lists_are_sorted_and_sized() {
        let (q, corpus) = random_corpus(9, 7, 3, 4);
        let total: usize = corpus.iter().map(|d| d.len()).sum();
        for k_prime in [1, 4, 100] {
            let (_, nb) = generate_candidates(&corpus, &q, k_prime, Similarity::cosine()).unwrap();
            for l in &nb.lists {
                assert_eq!(l.len(), k_prime.min(total));
                assert!(l.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            }
        }
    }
}
