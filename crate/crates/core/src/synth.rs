//! Synthetic MaxSim matrices and embedding sets with a controlled score structure.
//!
//! Rows get a target mean (the "ladder") and cells are drawn from a normal
//! around it, truncated to the value range by rejection. Row 0 has the
//! highest mean in the ladder profiles.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::oracle::{DocTokens, MaxSimOracle, QueryTokens, Similarity};
use crate::rng::{self, RunRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreProfile {
    /// Strictly decreasing row means with gaps of at least `3 * noise_scale`.
    WellSeparated,
    /// A ladder whose rows `K-1, K, K+1` (0-based) sit within `noise_scale` of each other.
    ClusteredNearBoundary,
    /// Row means drawn uniformly from the value range.
    #[default]
    UniformRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub t: usize,
    pub profile: ScoreProfile,
    /// The `K` whose boundary the clustered profile crowds.
    pub boundary_k: usize,
    pub value_range: (f64, f64),
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 50,
            t: 32,
            profile: ScoreProfile::UniformRandom,
            boundary_k: 5,
            value_range: (0.0, 1.0),
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.value_range;
        if self.n == 0 || self.t == 0 {
            return Err(Error::config("synth spec needs n >= 1 and t >= 1"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!(
                "value_range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        if self.profile == ScoreProfile::ClusteredNearBoundary && self.boundary_k == 0 {
            return Err(Error::config("boundary_k must be >= 1 for the clustered profile"));
        }
        if self.profile == ScoreProfile::WellSeparated && self.n > 1 {
            let gap = self.ladder_gap();
            if gap < 3.0 * self.noise_scale {
                return Err(Error::config(format!(
                    "well-separated ladder gap {gap} is below 3 x noise_scale = {}; lower noise_scale or n",
                    3.0 * self.noise_scale
                )));
            }
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        let span = self.value_range.1 - self.value_range.0;
        (2.0 * self.noise_scale).min(span / 4.0)
    }

    fn ladder_gap(&self) -> f64 {
        let span = self.value_range.1 - self.value_range.0;
        (span - 2.0 * self.margin()) / (self.n.max(2) - 1) as f64
    }

    fn ladder(&self) -> Vec<f64> {
        let top = self.value_range.1 - self.margin();
        if self.n == 1 {
            return vec![0.5 * (self.value_range.0 + self.value_range.1)];
        }
        let gap = self.ladder_gap();
        (0..self.n).map(|i| top - gap * i as f64).collect()
    }

    /// Target mean of every row.
    pub fn row_means(&self, rng: &mut RunRng) -> Vec<f64> {
        let (lo, hi) = self.value_range;
        match self.profile {
            ScoreProfile::WellSeparated => self.ladder(),
            ScoreProfile::ClusteredNearBoundary => {
                let mut means = self.ladder();
                let anchor = self.boundary_k.saturating_sub(1).min(self.n - 1);
                let end = (self.boundary_k + 1).min(self.n - 1);
                for (step, i) in (anchor..=end).enumerate() {
                    means[i] = means[anchor] - self.noise_scale * step as f64 / 3.0;
                }
                means
            }
            ScoreProfile::UniformRandom => (0..self.n).map(|_| rng.random_range(lo..=hi)).collect(),
        }
    }
}

/// Normal(mean, sd) truncated to `[lo, hi]`.
fn truncated_normal(rng: &mut RunRng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, sd).expect("sd is finite and positive");
    for _ in 0..1000 {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthMatrix {
    pub n: usize,
    pub t: usize,
    pub values: Vec<f32>,
    pub row_means: Vec<f64>,
    pub value_range: (f64, f64),
}

impl SynthMatrix {
    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[i * self.t..(i + 1) * self.t]
            .iter()
            .map(|&v| v as f64)
            .sum()
    }

    pub fn to_oracle(&self) -> Result<MaxSimOracle> {
        MaxSimOracle::from_matrix(self.n, self.t, self.values.clone(), self.value_range)
    }
}

pub fn gen_matrix(spec: &SynthSpec) -> Result<SynthMatrix> {
    gen_matrix_with_rng(spec, &mut rng::stream(spec.seed, 0))
}

fn gen_matrix_with_rng(spec: &SynthSpec, rng: &mut RunRng) -> Result<SynthMatrix> {
    spec.validate()?;
    let (lo, hi) = spec.value_range;
    let row_means = spec.row_means(rng);
    let mut values = Vec::with_capacity(spec.n * spec.t);
    for &m in &row_means {
        for _ in 0..spec.t {
            // f32 rounding is monotone, so values stay inside [lo, hi] when the ends are representable
            let v = truncated_normal(rng, m, spec.noise_scale, lo, hi) as f32;
            values.push(v.clamp(lo as f32, hi as f32));
        }
    }
    Ok(SynthMatrix {
        n: spec.n,
        t: spec.t,
        values,
        row_means,
        value_range: spec.value_range,
    })
}

#[derive(Clone, Debug)]
pub struct SynthEmbeddings {
    pub query: QueryTokens,
    pub docs: Vec<DocTokens>,
    /// The cell values the embeddings were built to reproduce.
    pub target: SynthMatrix,
}

impl SynthEmbeddings {
    pub fn oracle(&self) -> Result<MaxSimOracle> {
        MaxSimOracle::from_embeddings(self.query.clone(), self.docs.clone(), Similarity::cosine())
    }
}

fn random_unit(rng: &mut RunRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Unit vectors whose cosine MaxSim matrix approximates a generated target matrix.
///
/// Document token `j` of row `i` is aimed at query token `j mod T`:
/// `e = c q_t + sqrt(1 - c^2) u` with `u` a random unit vector orthogonal to
/// `q_t` and `c` the target cell value, so `sim(e, q_t) = c`. Tokens beyond
/// the first `T` are aimed with the range minimum. Cross-token similarities
/// are `O(1/sqrt(M))`, so the induced matrix follows the target closely when
/// the range sits well above that level.
pub fn gen_embeddings(spec: &SynthSpec, dim: usize, doc_tokens: usize) -> Result<SynthEmbeddings> {
    if dim < 2 {
        return Err(Error::config(format!("embedding dimension must be >= 2, got {dim}")));
    }
    if doc_tokens == 0 {
        return Err(Error::config("doc_tokens must be >= 1"));
    }
    let (lo, hi) = spec.value_range;
    if lo < -1.0 || hi > 1.0 {
        return Err(Error::config(format!(
            "embedding value_range must lie in [-1, 1], got [{lo}, {hi}]"
        )));
    }
    let mut rng = rng::stream(spec.seed, 0);
    let target = gen_matrix_with_rng(spec, &mut rng)?;
    let mut emb_rng = rng::stream(spec.seed, 1);

    let query_f64: Vec<Vec<f64>> = (0..spec.t).map(|_| random_unit(&mut emb_rng, dim)).collect();
    let query = QueryTokens::new(query_f64.iter().map(|q| to_unit_f32(q)).collect())?;

    let mut docs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut tokens = Vec::with_capacity(doc_tokens);
        for j in 0..doc_tokens {
            let t = j % spec.t;
            let c = if j < spec.t {
                target.values[i * spec.t + t] as f64
            } else {
                lo
            };
            let q = &query_f64[t];
            let mut u = random_unit(&mut emb_rng, dim);
            let proj: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
            let un = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let s = (1.0 - c * c).max(0.0).sqrt();
            let e: Vec<f64> = q.iter().zip(&u).map(|(qa, ua)| c * qa + s * ua / un).collect();
            tokens.push(to_unit_f32(&e));
        }
        docs.push(DocTokens::new(format!("doc{i:05}"), tokens)?);
    }
    Ok(SynthEmbeddings { query, docs, target })
}
