//! Config-driven `run`, `gen` and `verify` commands.
//!
//! Everything here is a composition of library calls; the binary only parses
//! flags and prints. Relative paths in a config file resolve against the
//! file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, Termination};
use crate::eval::{self, FrontierPoint, Instance, Method, QrelSet, QueryOutcome};
use crate::formats::{self, QueryEntry};
use crate::oracle::{MaxSimOracle, Similarity, SimilarityKind, NORM_TOLERANCE};
use crate::pipeline::{self, BoundsMode, CandidateArtifact, NegativeMode, PipelineSettings, DEFAULT_K_PRIME};
use crate::rng;
use crate::synth::{self, SynthSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Bandit,
    DocUniform,
    DocTopMargin,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingShape {
    pub dim: usize,
    pub doc_tokens: usize,
}

impl Default for EmbeddingShape {
    fn default() -> Self {
        EmbeddingShape {
            dim: 64,
            doc_tokens: 32,
        }
    }
}

/// A family of synthetic queries. Query `q` uses `spec` with its seed replaced
/// by a child seed derived from `(spec.seed, q)`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    #[serde(default = "one")]
    pub queries: usize,
    #[serde(default)]
    pub spec: SynthSpec,
    /// When set, each query gets an embedding corpus and goes through candidate generation.
    pub embeddings: Option<EmbeddingShape>,
}

fn one() -> usize {
    1
}

impl SynthSource {
    pub fn query_spec(&self, q: usize) -> SynthSpec {
        SynthSpec {
            seed: rng::derive_seed(self.spec.seed, q as u64),
            ..self.spec
        }
    }
}

fn query_id(q: usize) -> String {
    format!("q{q:04}")
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    /// JSON-lines manifest of `{"query_id", "path"}` entries pointing at `CBH1` files.
    pub manifest: PathBuf,
    /// Support of every cell, used as generic bounds.
    #[serde(default = "cosine_range")]
    pub range: (f64, f64),
}

fn cosine_range() -> (f64, f64) {
    (-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    /// JSON-lines manifest of `{"query_id", "path", "corpus"?}` entries.
    pub queries: PathBuf,
    /// Corpus manifest for queries that do not name their own.
    pub corpus: Option<PathBuf>,
    #[serde(default = "cosine_kind")]
    pub similarity: SimilarityKind,
    /// Similarity support; defaults to `[-1, 1]` for cosine and the norm bound for dot.
    pub range: Option<(f64, f64)>,
}

fn cosine_kind() -> SimilarityKind {
    SimilarityKind::Cosine
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: Option<SynthSource>,
    pub matrix: Option<MatrixSource>,
    pub embeddings: Option<EmbeddingSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_prime: usize,
    /// `ann` for embedding data, `generic` for matrices when unset.
    pub bounds: Option<BoundsMode>,
    pub negatives: NegativeMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_prime: DEFAULT_K_PRIME,
            bounds: None,
            negatives: NegativeMode::Clamp,
        }
    }
}

/// Either an explicit list or `"default"`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Named(String),
}

impl Grid {
    fn resolve(&self, field: &str, default: fn() -> Vec<f64>) -> Result<Vec<f64>> {
        match self {
            Grid::Named(s) if s == "default" => Ok(default()),
            Grid::Named(s) => Err(Error::config(format!(
                "{field}: expected a list or \"default\", got {s:?}"
            ))),
            Grid::Values(v) if v.is_empty() => Err(Error::config(format!("{field}: grid is empty"))),
            Grid::Values(v) => Ok(v.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// α grid for bandit mode; without it a single run at `bandit.radius.alpha_ef`.
    pub alpha: Option<Grid>,
    /// γ grid for the budgeted baselines.
    pub gamma: Option<Grid>,
    /// In bandit mode, also sweep both baselines over the γ grid.
    pub baselines: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub results: PathBuf,
    pub frontier: PathBuf,
    /// Directory for per-query candidate artifacts (embedding data only).
    pub candidates: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            results: "results.jsonl".into(),
            frontier: "frontier.csv".into(),
            candidates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    /// Top-K size for every method; overrides `bandit.k`.
    pub k: usize,
    /// Seed for every randomized method; overrides `bandit.seed`.
    pub seed: u64,
    /// Budget for a single doc-uniform / doc-top-margin run.
    pub gamma: Option<f64>,
    pub qrels: Option<PathBuf>,
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
    pub bandit: BanditConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: RunMode::Bandit,
            k: 5,
            seed: 0,
            gamma: None,
            qrels: None,
            data: DataConfig::default(),
            pipeline: PipelineConfig::default(),
            bandit: BanditConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Toml {
        path: path.to_path_buf(),
        source: e,
    })
}

impl ExperimentConfig {
    /// Parses, validates, and rebases relative paths onto the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = parse_toml(path)?;
        cfg.rebase(&config_dir(path));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        if let Some(q) = &mut self.qrels {
            rebase(base, q);
        }
        if let Some(m) = &mut self.data.matrix {
            rebase(base, &mut m.manifest);
        }
        if let Some(e) = &mut self.data.embeddings {
            rebase(base, &mut e.queries);
            if let Some(c) = &mut e.corpus {
                rebase(base, c);
            }
        }
        rebase(base, &mut self.output.results);
        rebase(base, &mut self.output.frontier);
        if let Some(c) = &mut self.output.candidates {
            rebase(base, c);
        }
    }

    /// The bandit settings with the top-level `k` and `seed` applied.
    pub fn bandit_config(&self) -> BanditConfig {
        BanditConfig {
            k: self.k,
            seed: self.seed,
            ..self.bandit
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let sources = [d.synth.is_some(), d.matrix.is_some(), d.embeddings.is_some()];
        let count = sources.iter().filter(|&&s| s).count();
        if count != 1 {
            return Err(Error::config(format!(
                "data: exactly one of data.synth, data.matrix, data.embeddings must be set, found {count}"
            )));
        }
        if self.k == 0 {
            return Err(Error::config("k: must be >= 1"));
        }
        if self.pipeline.k_prime == 0 {
            return Err(Error::config("pipeline.k_prime: must be >= 1"));
        }
        let has_embeddings = d.embeddings.is_some() || d.synth.as_ref().is_some_and(|s| s.embeddings.is_some());
        if self.pipeline.bounds == Some(BoundsMode::Ann) && !has_embeddings {
            return Err(Error::config(
                "pipeline.bounds: \"ann\" needs embedding data (data.embeddings or data.synth.embeddings)",
            ));
        }
        if let Some(s) = &d.synth {
            if s.queries == 0 {
                return Err(Error::config("data.synth.queries: must be >= 1"));
            }
            s.spec
                .validate()
                .map_err(|e| Error::config(format!("data.synth.spec: {e}")))?;
        }
        if let Some(m) = &d.matrix {
            if !m.manifest.exists() {
                return Err(Error::config(format!(
                    "data.matrix.manifest: {} does not exist",
                    m.manifest.display()
                )));
            }
            if m.range.0.partial_cmp(&m.range.1) != Some(std::cmp::Ordering::Less) {
                return Err(Error::config("data.matrix.range: needs lo < hi"));
            }
        }
        if let Some(e) = &d.embeddings {
            if !e.queries.exists() {
                return Err(Error::config(format!(
                    "data.embeddings.queries: {} does not exist",
                    e.queries.display()
                )));
            }
            if let Some(c) = e.corpus.as_ref().filter(|c| !c.exists()) {
                return Err(Error::config(format!(
                    "data.embeddings.corpus: {} does not exist",
                    c.display()
                )));
            }
        }
        if let Some(q) = self.qrels.as_ref().filter(|q| !q.exists()) {
            return Err(Error::config(format!("qrels: {} does not exist", q.display())));
        }
        self.bandit_config()
            .validate()
            .map_err(|e| Error::config(format!("bandit: {e}")))?;
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::config(format!("gamma: must lie in (0, 1], got {g}")));
            }
        }
        if matches!(self.mode, RunMode::DocUniform | RunMode::DocTopMargin)
            && self.gamma.is_none()
            && self.sweep.gamma.is_none()
        {
            return Err(Error::config(
                "gamma: required for budgeted modes unless sweep.gamma is set",
            ));
        }
        if self.output.candidates.is_some() && !has_embeddings {
            return Err(Error::config("output.candidates: only produced for embedding data"));
        }
        Ok(())
    }

    /// Methods to run, in output order.
    pub fn methods(&self) -> Result<Vec<Method>> {
        let k = self.k;
        let gamma_grid = |single: Option<f64>| -> Result<Vec<f64>> {
            match (&self.sweep.gamma, single) {
                (Some(g), _) => g.resolve("sweep.gamma", eval::default_gamma_grid),
                (None, Some(g)) => Ok(vec![g]),
                (None, None) => Ok(eval::default_gamma_grid()),
            }
        };
        let budgets = |grid: &[f64], uniform: bool| -> Vec<Method> {
            grid.iter()
                .map(|&gamma| {
                    if uniform {
                        Method::DocUniform {
                            k,
                            gamma,
                            seed: self.seed,
                        }
                    } else {
                        Method::DocTopMargin { k, gamma }
                    }
                })
                .collect()
        };
        Ok(match self.mode {
            RunMode::Bandit => {
                let template = self.bandit_config();
                let alphas = match &self.sweep.alpha {
                    Some(g) => g.resolve("sweep.alpha", eval::default_alpha_grid)?,
                    None => vec![template.radius.alpha_ef],
                };
                let mut methods = Vec::new();
                for alpha in alphas {
                    let mut cfg = template;
                    cfg.radius.alpha_ef = alpha;
                    cfg.validate().map_err(|e| Error::config(format!("sweep.alpha: {e}")))?;
                    methods.push(Method::Bandit(cfg));
                }
                if self.sweep.baselines {
                    let grid = gamma_grid(None)?;
                    methods.extend(budgets(&grid, true));
                    methods.extend(budgets(&grid, false));
                }
                methods
            }
            RunMode::DocUniform => budgets(&gamma_grid(self.gamma)?, true),
            RunMode::DocTopMargin => budgets(&gamma_grid(self.gamma)?, false),
            RunMode::Full => vec![Method::Full { k }],
        })
    }
}

/// Reranking problems plus, for embedding data, their candidate artifacts.
pub struct LoadedData {
    pub instances: Vec<Instance>,
    pub artifacts: Vec<CandidateArtifact>,
}

fn stage2_instance(query_id: String, s2: pipeline::Stage2) -> Result<(Instance, CandidateArtifact)> {
    let artifact = s2.artifact(&query_id);
    let inst = Instance::new(query_id, s2.candidates.doc_ids.clone(), s2.oracle, s2.bounds)?;
    Ok((inst, artifact))
}

fn canonical(path: &Path) -> String {
    fs::canonicalize(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let settings = |sim: Similarity| PipelineSettings {
        k_prime: cfg.pipeline.k_prime,
        bounds: cfg.pipeline.bounds.unwrap_or(BoundsMode::Ann),
        negatives: cfg.pipeline.negatives,
        sim,
    };
    let mut artifacts = Vec::new();
    let instances = if let Some(src) = &cfg.data.synth {
        let built: Vec<(Instance, Option<CandidateArtifact>)> = (0..src.queries)
            .into_par_iter()
            .map(|q| {
                let spec = src.query_spec(q);
                match src.embeddings {
                    Some(shape) => {
                        let emb = synth::gen_embeddings(&spec, shape.dim, shape.doc_tokens)?;
                        let s2 = pipeline::prepare(&emb.docs, &emb.query, &settings(Similarity::cosine()))?;
                        let (inst, art) = stage2_instance(query_id(q), s2)?;
                        Ok((inst, Some(art)))
                    }
                    None => {
                        let oracle = synth::gen_matrix(&spec)?.to_oracle()?;
                        Ok((Instance::with_generic_bounds(query_id(q), oracle)?, None))
                    }
                }
            })
            .collect::<Result<_>>()?;
        built
            .into_iter()
            .map(|(inst, art)| {
                artifacts.extend(art);
                inst
            })
            .collect()
    } else if let Some(src) = &cfg.data.matrix {
        let entries: Vec<QueryEntry> = formats::read_jsonl(&src.manifest)?;
        entries
            .par_iter()
            .map(|e| {
                let path = formats::resolve(&src.manifest, &e.path);
                let (n, t, values) = formats::read_matrix(&path)?;
                let oracle = MaxSimOracle::from_matrix(n, t, values, src.range)
                    .map_err(|err| Error::format(&path, err.to_string()))?;
                Instance::with_generic_bounds(e.query_id.clone(), oracle)
            })
            .collect::<Result<_>>()?
    } else if let Some(src) = &cfg.data.embeddings {
        let entries: Vec<QueryEntry> = formats::read_jsonl(&src.queries)?;
        let mut corpora: BTreeMap<PathBuf, Vec<crate::oracle::DocTokens>> = BTreeMap::new();
        let mut out = Vec::with_capacity(entries.len());
        for e in &entries {
            let corpus_path = match (&e.corpus, &src.corpus) {
                (Some(c), _) => formats::resolve(&src.queries, c),
                (None, Some(c)) => c.clone(),
                (None, None) => {
                    return Err(Error::config(format!(
                        "data.embeddings.corpus: query {} names no corpus and no default is set",
                        e.query_id
                    )))
                }
            };
            if !corpora.contains_key(&corpus_path) {
                corpora.insert(corpus_path.clone(), formats::read_corpus(&corpus_path)?);
            }
            let docs = &corpora[&corpus_path];
            let query_path = formats::resolve(&src.queries, &e.path);
            let query = formats::read_query(&query_path)?;
            let sim = match (src.similarity, src.range) {
                (SimilarityKind::Cosine, None) => Similarity::cosine(),
                (SimilarityKind::Cosine, Some((lo, hi))) => Similarity::cosine().with_range(lo, hi)?,
                (SimilarityKind::Dot, Some((lo, hi))) => Similarity::dot(lo, hi)?,
                (SimilarityKind::Dot, None) => Similarity::dot_bounded_by_norms(&query, docs),
            };
            let s2 = pipeline::prepare(docs, &query, &settings(sim))?;
            let (inst, mut art) = stage2_instance(e.query_id.clone(), s2)?;
            art.query_path = Some(canonical(&query_path));
            art.corpus_manifest = Some(canonical(&corpus_path));
            artifacts.push(art);
            out.push(inst);
        }
        out
    } else {
        return Err(Error::config("data: no data source configured"));
    };
    Ok(LoadedData { instances, artifacts })
}

/// One line of the per-query results file.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub query_id: String,
    pub method: String,
    pub param: f64,
    pub k: usize,
    pub topk: Vec<String>,
    pub coverage: f64,
    pub reveals: usize,
    pub iterations: usize,
    pub terminated_by: Termination,
    pub overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    /// `(row, col, value)` in reveal order; only with `--trace`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<(usize, usize, f64)>>,
}

impl ResultRecord {
    fn new(method: &Method, o: QueryOutcome, trace: bool) -> Self {
        ResultRecord {
            query_id: o.query_id,
            method: method.name().to_string(),
            param: method.param(),
            k: method.k(),
            topk: o.topk_ids,
            coverage: o.result.coverage,
            reveals: o.result.reveals.len(),
            iterations: o.result.iterations,
            terminated_by: o.result.terminated_by,
            overlap: o.overlap,
            recall: o.recall,
            ndcg: o.ndcg,
            mrr: o.mrr,
            trace: trace.then(|| o.result.reveals.iter().map(|r| (r.row, r.col, r.value)).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub trace: bool,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub points: Vec<FrontierPoint>,
    pub records: usize,
    pub results_path: PathBuf,
    pub frontier_path: PathBuf,
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::usage(format!("--workers: {e}")))
}

/// Runs an experiment config in memory; nothing is written.
pub fn execute(
    cfg: &ExperimentConfig,
    trace: bool,
) -> Result<(Vec<ResultRecord>, Vec<FrontierPoint>, Vec<CandidateArtifact>)> {
    let data = load_data(cfg)?;
    info!("loaded {} queries", data.instances.len());
    if data.instances.is_empty() {
        return Err(Error::config("data: no queries found"));
    }
    for inst in &data.instances {
        if inst.oracle.n_docs() < cfg.k {
            return Err(Error::config(format!(
                "k: query {} has {} candidates, fewer than k = {}",
                inst.query_id,
                inst.oracle.n_docs(),
                cfg.k
            )));
        }
    }
    let qrels = cfg.qrels.as_deref().map(QrelSet::load).transpose()?;
    let mut records = Vec::new();
    let mut points = Vec::new();
    for method in cfg.methods()? {
        let outcomes = eval::run_method(&data.instances, &method, qrels.as_ref())?;
        let point = eval::aggregate(&method, &outcomes, qrels.is_some())?;
        info!(
            "{} {}: coverage {:.4}, overlap@{} {:.4}",
            point.method, point.param, point.mean_coverage, point.k, point.overlap
        );
        points.push(point);
        records.extend(outcomes.into_iter().map(|o| ResultRecord::new(&method, o, trace)));
    }
    Ok((records, points, data.artifacts))
}

/// Writes to a sibling temp file, then renames, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json_line<T: Serialize>(buf: &mut Vec<u8>, item: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *buf, item).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    buf.push(b'\n');
    Ok(())
}

pub fn cmd_run(config: &Path, opts: RunOptions) -> Result<RunReport> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let pool = thread_pool(opts.workers)?;
    let (records, points, artifacts) = pool.install(|| execute(&cfg, opts.trace))?;

    let results_path = cfg.output.results.clone();
    let mut results = Vec::new();
    for r in &records {
        to_json_line(&mut results, r, &results_path)?;
    }
    let mut frontier = Vec::new();
    eval::write_frontier_csv(&mut frontier, &points)?;

    if let Some(dir) = &cfg.output.candidates {
        for art in &artifacts {
            let path = dir.join(format!("{}.json", art.query_id));
            let bytes = serde_json::to_vec(art).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
            write_atomic(&path, &bytes)?;
        }
    }
    write_atomic(&results_path, &results)?;
    write_atomic(&cfg.output.frontier, &frontier)?;
    Ok(RunReport {
        points,
        records: records.len(),
        results_path,
        frontier_path: cfg.output.frontier.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub synth: SynthSource,
}

fn default_output() -> PathBuf {
    "data".into()
}

#[derive(Clone, Debug)]
pub struct GenReport {
    /// The manifest to point a run config at.
    pub manifest: PathBuf,
    pub files: usize,
}

/// Writes synthetic data.
///
/// Matrices: `matrix_XXXX.cbh` plus `matrices.jsonl`. Embeddings: one
/// directory per query holding `query.cbm`, `docs/*.cbm` and `corpus.jsonl`,
/// plus a top-level `queries.jsonl`.
pub fn cmd_gen(config: &Path, seed: Option<u64>) -> Result<GenReport> {
    let mut cfg: GenConfig = parse_toml(config)?;
    rebase(&config_dir(config), &mut cfg.output);
    if let Some(s) = seed {
        cfg.synth.spec.seed = s;
    }
    if cfg.synth.queries == 0 {
        return Err(Error::config("synth.queries: must be >= 1"));
    }
    cfg.synth
        .spec
        .validate()
        .map_err(|e| Error::config(format!("synth.spec: {e}")))?;
    let out = &cfg.output;

    // (relative path, bytes) for every file, built before anything is written
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut entries = Vec::new();
    let manifest = match cfg.synth.embeddings {
        None => {
            for q in 0..cfg.synth.queries {
                let m = synth::gen_matrix(&cfg.synth.query_spec(q))?;
                let name = format!("matrix_{q:04}.cbh");
                files.push((out.join(&name), formats::encode_matrix(m.n, m.t, &m.values)?));
                entries.push(QueryEntry {
                    query_id: query_id(q),
                    path: name,
                    corpus: None,
                });
            }
            out.join("matrices.jsonl")
        }
        Some(shape) => {
            for q in 0..cfg.synth.queries {
                let emb = synth::gen_embeddings(&cfg.synth.query_spec(q), shape.dim, shape.doc_tokens)?;
                let qdir = query_id(q);
                let qpath = out.join(&qdir).join("query.cbm");
                files.push((qpath, formats::encode_embeddings(shape.dim, emb.query.as_flat())?));
                let mut corpus = Vec::new();
                for d in &emb.docs {
                    let rel = format!("docs/{}.cbm", d.doc_id);
                    files.push((
                        out.join(&qdir).join(&rel),
                        formats::encode_embeddings(shape.dim, d.as_flat())?,
                    ));
                    corpus.push(formats::CorpusEntry {
                        doc_id: d.doc_id.clone(),
                        path: rel,
                    });
                }
                let cpath = out.join(&qdir).join("corpus.jsonl");
                files.push((cpath.clone(), jsonl_bytes(&corpus, &cpath)?));
                entries.push(QueryEntry {
                    query_id: qdir.clone(),
                    path: format!("{qdir}/query.cbm"),
                    corpus: Some(format!("{qdir}/corpus.jsonl")),
                });
            }
            out.join("queries.jsonl")
        }
    };
    files.push((manifest.clone(), jsonl_bytes(&entries, &manifest)?));
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(GenReport {
        manifest,
        files: files.len(),
    })
}

fn jsonl_bytes<T: Serialize>(items: &[T], path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        to_json_line(&mut buf, item, path)?;
    }
    Ok(buf)
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub files_checked: usize,
    pub cells_checked: usize,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Largest number of cells re-scored per candidate artifact.
const SOUNDNESS_SAMPLE: usize = 20_000;
const BOUND_TOLERANCE: f64 = 1e-9;

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Checks every recognised file under `path` (`.cbh`, `.cbm`, `.jsonl`
/// manifests, `.json` candidate artifacts). Only a missing `path` is an `Err`;
/// everything else is reported as a violation.
pub fn cmd_verify(path: &Path) -> Result<VerifyReport> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    let mut report = VerifyReport::default();
    for f in &files {
        let ext = f.extension().and_then(|e| e.to_str()).unwrap_or("");
        let checked = match ext {
            "cbh" => verify_matrix(f, &mut report.violations),
            "cbm" => verify_embeddings(f, &mut report.violations),
            "jsonl" => verify_manifest(f, &mut report.violations),
            "json" => verify_artifact(f, &mut report),
            _ => false,
        };
        report.files_checked += usize::from(checked);
    }
    Ok(report)
}

fn verify_matrix(path: &Path, v: &mut Vec<String>) -> bool {
    match formats::read_matrix(path) {
        Err(e) => v.push(e.to_string()),
        Ok((n, t, values)) => {
            if n == 0 || t == 0 {
                v.push(format!("{}: empty matrix {n} x {t}", path.display()));
            }
            if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
                v.push(format!(
                    "{}: non-finite value at row {}, token {}",
                    path.display(),
                    pos / t,
                    pos % t
                ));
            }
        }
    }
    true
}

fn verify_embeddings(path: &Path, v: &mut Vec<String>) -> bool {
    match formats::read_embeddings(path) {
        Err(e) => v.push(e.to_string()),
        Ok((dim, count, values)) => {
            if dim == 0 || count == 0 {
                v.push(format!(
                    "{}: empty embedding file (M = {dim}, count = {count})",
                    path.display()
                ));
                return true;
            }
            for (j, vec) in values.chunks_exact(dim).enumerate() {
                if vec.iter().any(|x| !x.is_finite()) {
                    v.push(format!("{}: vector {j} has non-finite components", path.display()));
                    continue;
                }
                let norm = vec.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    v.push(format!("{}: vector {j} has norm {norm}, expected 1", path.display()));
                }
            }
        }
    }
    true
}

fn verify_manifest(path: &Path, v: &mut Vec<String>) -> bool {
    let values: Vec<serde_json::Value> = match formats::read_jsonl(path) {
        Ok(x) => x,
        Err(e) => {
            v.push(e.to_string());
            return true;
        }
    };
    for (lineno, value) in values.iter().enumerate() {
        let line = lineno + 1;
        let mut check = |field: &str| match value.get(field).and_then(|p| p.as_str()) {
            None => v.push(format!(
                "{}: line {line}: missing string field {field:?}",
                path.display()
            )),
            Some(rel) => {
                let p = formats::resolve(path, rel);
                if !p.exists() {
                    v.push(format!(
                        "{}: line {line}: {} does not exist",
                        path.display(),
                        p.display()
                    ));
                }
            }
        };
        if value.get("doc_id").is_none() && value.get("query_id").is_none() {
            v.push(format!("{}: line {line}: neither doc_id nor query_id", path.display()));
            continue;
        }
        check("path");
        if value.get("corpus").is_some() {
            check("corpus");
            if let (Some(q), Some(c)) = (value["path"].as_str(), value["corpus"].as_str()) {
                check_dims(&formats::resolve(path, q), &formats::resolve(path, c), v);
            }
        }
    }
    true
}

/// Query and corpus must share an embedding dimension.
fn check_dims(query: &Path, corpus: &Path, v: &mut Vec<String>) {
    let (Ok((qdim, _, _)), Ok(docs)) = (formats::read_embeddings(query), formats::read_corpus(corpus)) else {
        return; // unreadable files are reported on their own
    };
    if let Some(d) = docs.iter().find(|d| d.dim() != qdim) {
        v.push(format!(
            "{}: document {} has dimension {}, query {} has {qdim}",
            corpus.display(),
            d.doc_id,
            d.dim(),
            query.display()
        ));
    }
}

fn verify_artifact(path: &Path, report: &mut VerifyReport) -> bool {
    let v = &mut report.violations;
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            v.push(format!("{}: {e}", path.display()));
            return true;
        }
    };
    let art: CandidateArtifact = match serde_json::from_str(&text) {
        Ok(a) => a,
        Err(_) => return false, // not a candidate artifact
    };
    let (n, t) = (art.doc_ids.len(), art.s_kprime.len());
    if art.lo.len() != n || art.hi.len() != n || art.lo.iter().chain(&art.hi).any(|r| r.len() != t) {
        v.push(format!(
            "{}: bound tables do not match {n} docs x {t} tokens",
            path.display()
        ));
        return true;
    }
    for i in 0..n {
        for tt in 0..t {
            if art.lo[i][tt].partial_cmp(&art.hi[i][tt]).is_none_or(|o| o.is_gt()) {
                v.push(format!(
                    "{}: doc {} token {tt}: lo {} > hi {}",
                    path.display(),
                    art.doc_ids[i],
                    art.lo[i][tt],
                    art.hi[i][tt]
                ));
            }
        }
    }
    let (Some(qp), Some(cp)) = (&art.query_path, &art.corpus_manifest) else {
        return true; // nothing to re-score against
    };
    let oracle = match rescoring_oracle(&art, Path::new(qp), Path::new(cp)) {
        Ok(o) => o,
        Err(e) => {
            v.push(format!("{}: cannot re-score: {e}", path.display()));
            return true;
        }
    };
    let cells = n * t;
    let picked: Vec<usize> = if cells <= SOUNDNESS_SAMPLE {
        (0..cells).collect()
    } else {
        let mut r = rng::stream(0, 0);
        let mut s = sample(&mut r, cells, SOUNDNESS_SAMPLE).into_vec();
        s.sort_unstable();
        s
    };
    for c in picked {
        let (i, tt) = (c / t, c % t);
        let h = oracle.maxsim(i, tt).expect("index in range");
        let (lo, hi) = (art.lo[i][tt], art.hi[i][tt]);
        if h > hi + BOUND_TOLERANCE || h < lo - BOUND_TOLERANCE {
            v.push(format!(
                "{}: unsound bound for doc {} token {tt}: true MaxSim {h} outside [{lo}, {hi}]",
                path.display(),
                art.doc_ids[i]
            ));
        }
        report.cells_checked += 1;
    }
    true
}

fn rescoring_oracle(art: &CandidateArtifact, query: &Path, corpus: &Path) -> Result<MaxSimOracle> {
    let query = formats::read_query(query)?;
    let mut docs = formats::read_corpus(corpus)?;
    let pos: BTreeMap<&str, usize> = art.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    docs.retain(|d| pos.contains_key(d.doc_id.as_str()));
    docs.sort_by_key(|d| pos[d.doc_id.as_str()]);
    if docs.len() != art.doc_ids.len() {
        return Err(Error::format(
            corpus,
            "some candidate documents are missing from the corpus",
        ));
    }
    let sim = Similarity {
        kind: art.similarity,
        range: (art.range[0], art.range[1]),
    };
    MaxSimOracle::from_embeddings(query, docs, sim)
}
