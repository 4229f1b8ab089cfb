//! Ranking-fidelity and retrieval metrics, and the sweeps that turn runs into
//! cost/accuracy frontiers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::bandit::{self, BanditConfig, RunResult};
use crate::baselines;
use crate::bounds::CellBounds;
use crate::oracle::MaxSimOracle;
use crate::rank::top_k_indices;
use crate::rng;
use crate::{Error, Result};

/// `|approx ∩ exact| / K`. Both sets must have exactly `k` members.
pub fn overlap_at_k<T: Eq + Hash>(approx: &[T], exact: &[T], k: usize) -> Result<f64> {
    if approx.len() != k || exact.len() != k {
        return Err(Error::usage(format!(
            "overlap@{k} needs two sets of size {k}, got {} and {}",
            approx.len(),
            exact.len()
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let exact: HashSet<&T> = exact.iter().collect();
    let hits = approx.iter().collect::<HashSet<_>>().intersection(&exact).count();
    Ok(hits as f64 / k as f64)
}

// Rank-based metrics take the ranked list as given; a list shorter than K is
// scored as if padded with non-relevant entries. `None` means no relevant docs.

pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|d| relevant.contains(d.as_ref())).count();
    Some(hits as f64 / relevant.len() as f64)
}

pub fn mrr_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(
        ranked
            .iter()
            .take(k)
            .position(|d| relevant.contains(d.as_ref()))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64),
    )
}

pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let gain = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d.as_ref()))
        .map(|(r, _)| gain(r))
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(gain).sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Binary relevance labels per query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QrelSet {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl QrelSet {
    /// TREC format: `query_id 0 doc_id relevance`, one judgment per line.
    /// Judgments with relevance ≤ 0 are kept out of the relevant set.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::config(format!(
                    "qrels line {}: expected 4 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let rel: f64 = fields[3].parse().map_err(|_| {
                Error::config(format!(
                    "qrels line {}: relevance {:?} is not a number",
                    lineno + 1,
                    fields[3]
                ))
            })?;
            let entry = map.entry(fields[0].to_string()).or_default();
            if rel > 0.0 {
                entry.insert(fields[2].to_string());
            }
        }
        Ok(QrelSet { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str) {
        self.map
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string());
    }

    /// Relevant documents for a query; `None` when the query has no positives.
    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id).filter(|s| !s.is_empty())
    }
}

/// One reranking problem: a candidate set with its oracle and per-cell bounds.
#[derive(Clone, Debug)]
pub struct Instance {
    pub query_id: String,
    pub doc_ids: Vec<String>,
    pub oracle: MaxSimOracle,
    pub bounds: CellBounds,
    scores: Vec<f64>,
}

impl Instance {
    pub fn new(
        query_id: impl Into<String>,
        doc_ids: Vec<String>,
        oracle: MaxSimOracle,
        bounds: CellBounds,
    ) -> Result<Self> {
        if doc_ids.len() != oracle.n_docs() {
            return Err(Error::usage(format!(
                "{} doc ids for {} oracle rows",
                doc_ids.len(),
                oracle.n_docs()
            )));
        }
        bounds.check_shape(&oracle)?;
        // ground truth for scoring fidelity; never charged to any method
        let scores = oracle.full_scores();
        Ok(Instance {
            query_id: query_id.into(),
            doc_ids,
            oracle,
            bounds,
            scores,
        })
    }

    /// Matrix-only instance with generic bounds from the oracle's range.
    pub fn with_generic_bounds(query_id: impl Into<String>, oracle: MaxSimOracle) -> Result<Self> {
        let (lo, hi) = oracle.range();
        let bounds = CellBounds::uniform(oracle.n_docs(), oracle.n_tokens(), lo, hi)?;
        let doc_ids = (0..oracle.n_docs()).map(|i| i.to_string()).collect();
        Self::new(query_id, doc_ids, oracle, bounds)
    }

    pub fn exact_topk(&self, k: usize) -> Vec<usize> {
        top_k_indices(&self.scores, k)
    }

    pub fn full_scores(&self) -> &[f64] {
        &self.scores
    }
}

/// A method with its operating parameter.
#[derive(Clone, Debug)]
pub enum Method {
    Bandit(BanditConfig),
    DocUniform { k: usize, gamma: f64, seed: u64 },
    DocTopMargin { k: usize, gamma: f64 },
    Full { k: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bandit(_) => "col-bandit",
            Method::DocUniform { .. } => "doc-uniform",
            Method::DocTopMargin { .. } => "doc-top-margin",
            Method::Full { .. } => "full",
        }
    }

    /// α for the bandit, γ for the budgeted baselines, 1 for full reranking.
    pub fn param(&self) -> f64 {
        match self {
            Method::Bandit(cfg) => cfg.radius.alpha_ef,
            Method::DocUniform { gamma, .. } | Method::DocTopMargin { gamma, .. } => *gamma,
            Method::Full { .. } => 1.0,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Method::Bandit(cfg) => cfg.k,
            Method::DocUniform { k, .. } | Method::DocTopMargin { k, .. } | Method::Full { k } => *k,
        }
    }

    /// Runs on one instance. Randomized methods draw from stream `(seed, query_index)`.
    pub fn run(&self, inst: &Instance, query_index: u64) -> Result<RunResult> {
        match self {
            Method::Bandit(cfg) => {
                let mut r = rng::stream(cfg.seed, query_index);
                bandit::run_with_rng(&inst.oracle, &inst.bounds, cfg, &mut r)
            }
            Method::DocUniform { k, gamma, seed } => {
                let mut r = rng::stream(*seed, query_index);
                baselines::doc_uniform_with_rng(&inst.oracle, *k, *gamma, &mut r)
            }
            Method::DocTopMargin { k, gamma } => baselines::doc_top_margin(&inst.oracle, &inst.bounds, *k, *gamma),
            Method::Full { k } => baselines::full_rerank(&inst.oracle, *k),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub query_id: String,
    pub result: RunResult,
    pub topk_ids: Vec<String>,
    pub overlap: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub mrr: Option<f64>,
}

/// Runs `method` on every instance (in parallel) and scores each result.
pub fn run_method(instances: &[Instance], method: &Method, qrels: Option<&QrelSet>) -> Result<Vec<QueryOutcome>> {
    let k = method.k();
    instances
        .par_iter()
        .enumerate()
        .map(|(q, inst)| {
            let result = method.run(inst, q as u64)?;
            let overlap = overlap_at_k(&result.topk, &inst.exact_topk(k), k)?;
            let topk_ids: Vec<String> = result.topk.iter().map(|&i| inst.doc_ids[i].clone()).collect();
            let rel = qrels.and_then(|qr| qr.relevant(&inst.query_id));
            Ok(QueryOutcome {
                query_id: inst.query_id.clone(),
                recall: rel.and_then(|r| recall_at_k(&topk_ids, r, k)),
                ndcg: rel.and_then(|r| ndcg_at_k(&topk_ids, r, k)),
                mrr: rel.and_then(|r| mrr_at_k(&topk_ids, r, k)),
                result,
                topk_ids,
                overlap,
            })
        })
        .collect()
}

/// One aggregated operating point of a method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub method: String,
    pub param: f64,
    pub k: usize,
    pub mean_coverage: f64,
    pub std_coverage: f64,
    pub overlap: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub mrr: Option<f64>,
    pub n_queries: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Ordered reduction of per-query outcomes. Queries lacking relevance labels
/// are left out of the IR means and reported in a warning.
pub fn aggregate(method: &Method, outcomes: &[QueryOutcome], with_qrels: bool) -> Result<FrontierPoint> {
    if outcomes.is_empty() {
        return Err(Error::usage("cannot aggregate zero queries"));
    }
    let cov: Vec<f64> = outcomes.iter().map(|o| o.result.coverage).collect();
    let ov: Vec<f64> = outcomes.iter().map(|o| o.overlap).collect();
    if with_qrels {
        let skipped = outcomes.iter().filter(|o| o.recall.is_none()).count();
        if skipped > 0 {
            warn!(
                "{} {}: {skipped} of {} queries have no relevant documents and were skipped for IR metrics",
                method.name(),
                method.param(),
                outcomes.len()
            );
        }
    }
    Ok(FrontierPoint {
        method: method.name().to_string(),
        param: method.param(),
        k: method.k(),
        mean_coverage: mean(&cov),
        std_coverage: std_dev(&cov),
        overlap: mean(&ov),
        recall: mean_defined(outcomes.iter().map(|o| o.recall)),
        ndcg: mean_defined(outcomes.iter().map(|o| o.ndcg)),
        mrr: mean_defined(outcomes.iter().map(|o| o.mrr)),
        n_queries: outcomes.len(),
    })
}

pub fn evaluate(instances: &[Instance], method: &Method, qrels: Option<&QrelSet>) -> Result<FrontierPoint> {
    aggregate(method, &run_method(instances, method, qrels)?, qrels.is_some())
}

/// 16 log-spaced values from 1e-3 to 1.
pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, 16)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..points)
                .map(|i| {
                    if i + 1 == points {
                        hi
                    } else {
                        10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

/// `{0.05, 0.10, ..., 1.0}`.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn sweep_alpha(
    instances: &[Instance],
    template: &BanditConfig,
    grid: &[f64],
    qrels: Option<&QrelSet>,
) -> Result<Vec<FrontierPoint>> {
    if grid.is_empty() {
        return Err(Error::usage("alpha grid is empty"));
    }
    grid.iter()
        .map(|&alpha| {
            let mut cfg = *template;
            cfg.radius.alpha_ef = alpha;
            cfg.validate()?;
            evaluate(instances, &Method::Bandit(cfg), qrels)
        })
        .collect()
}

/// Both budgeted baselines over the γ grid: all Doc-Uniform points, then all Doc-TopMargin points.
pub fn sweep_budgets(
    instances: &[Instance],
    k: usize,
    grid: &[f64],
    seed: u64,
    qrels: Option<&QrelSet>,
) -> Result<Vec<FrontierPoint>> {
    if grid.is_empty() {
        return Err(Error::usage("gamma grid is empty"));
    }
    let uniform = grid.iter().map(|&gamma| Method::DocUniform { k, gamma, seed });
    let margin = grid.iter().map(|&gamma| Method::DocTopMargin { k, gamma });
    uniform.chain(margin).map(|m| evaluate(instances, &m, qrels)).collect()
}

/// Smallest mean coverage among swept points whose mean overlap reaches `target`.
/// Points are not interpolated.
pub fn coverage_to_reach(points: &[FrontierPoint], target: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.overlap >= target)
        .map(|p| p.mean_coverage)
        .min_by(|a, b| a.total_cmp(b))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Frontier table as CSV. Metric columns carry the point's `K` in their header,
/// so all points must share one `K`.
pub fn write_frontier_csv<W: Write>(out: W, points: &[FrontierPoint]) -> Result<()> {
    let k = points.first().map_or(0, |p| p.k);
    if points.iter().any(|p| p.k != k) {
        return Err(Error::usage("frontier points mix different K"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method".to_string(),
        "param".to_string(),
        "mean_coverage".to_string(),
        "std_coverage".to_string(),
        format!("overlap@{k}"),
        format!("recall@{k}"),
        format!("ndcg@{k}"),
        format!("mrr@{k}"),
        "n_queries".to_string(),
    ])?;
    for p in points {
        w.write_record([
            p.method.clone(),
            p.param.to_string(),
            p.mean_coverage.to_string(),
            p.std_coverage.to_string(),
            p.overlap.to_string(),
            fmt_opt(p.recall),
            fmt_opt(p.ndcg),
            fmt_opt(p.mrr),
            p.n_queries.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<frontier csv>", e))?;
    Ok(())
}
