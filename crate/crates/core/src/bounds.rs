//! Per-document score intervals.
//!
//! Each row carries two kinds of interval:
//!
//! - a deterministic one, from revealed values plus per-cell support bounds
//!   `[a_it, b_it]` on the cells still hidden, which is always valid;
//! - a statistical one, `S_hat +/- r`, with an empirical Bernstein-Serfling
//!   style radius that scales with the observed spread and vanishes once the
//!   row is fully revealed.
//!
//! The decision interval is the statistical interval clipped to the
//! deterministic one.

use serde::{Deserialize, Serialize};

use crate::oracle::{MaxSimOracle, ObservationLedger};
use crate::{Error, Result};

/// Support bounds for every cell of an `N x T` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CellBounds {
    n_docs: usize,
    n_tokens: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CellBounds {
    /// The same interval for every cell (generic similarity-range bounds).
    pub fn uniform(n_docs: usize, n_tokens: usize, lo: f64, hi: f64) -> Result<Self> {
        CellBounds::from_parts(
            n_docs,
            n_tokens,
            vec![lo; n_docs * n_tokens],
            vec![hi; n_docs * n_tokens],
        )
    }

    pub fn from_parts(n_docs: usize, n_tokens: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let cells = n_docs * n_tokens;
        if lo.len() != cells || hi.len() != cells {
            return Err(Error::config(format!(
                "cell bounds need {cells} entries per side, got {} / {}",
                lo.len(),
                hi.len()
            )));
        }
        for (j, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::config(format!(
                    "cell ({}, {}) has invalid bounds [{a}, {b}]",
                    j / n_tokens.max(1),
                    j % n_tokens.max(1)
                )));
            }
        }
        Ok(CellBounds {
            n_docs,
            n_tokens,
            lo,
            hi,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn lo(&self, i: usize, t: usize) -> f64 {
        self.lo[i * self.n_tokens + t]
    }

    #[inline]
    pub fn hi(&self, i: usize, t: usize) -> f64 {
        self.hi[i * self.n_tokens + t]
    }

    #[inline]
    pub fn width(&self, i: usize, t: usize) -> f64 {
        self.hi(i, t) - self.lo(i, t)
    }

    pub fn row_widths(&self, i: usize) -> Vec<f64> {
        (0..self.n_tokens).map(|t| self.width(i, t)).collect()
    }

    pub fn lo_values(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi_values(&self) -> &[f64] {
        &self.hi
    }

    /// Cells whose true value falls outside its bounds, as `(row, col, value)`.
    pub fn violations(&self, oracle: &MaxSimOracle) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n_docs.min(oracle.n_docs()) {
            for t in 0..self.n_tokens.min(oracle.n_tokens()) {
                let h = oracle.cell(i, t);
                if h < self.lo(i, t) || h > self.hi(i, t) {
                    out.push((i, t, h));
                }
            }
        }
        out
    }

    pub(crate) fn check_shape(&self, oracle: &MaxSimOracle) -> Result<()> {
        if self.n_docs != oracle.n_docs() || self.n_tokens != oracle.n_tokens() {
            return Err(Error::config(format!(
                "cell bounds are {} x {}, matrix is {} x {}",
                self.n_docs,
                self.n_tokens,
                oracle.n_docs(),
                oracle.n_tokens()
            )));
        }
        Ok(())
    }
}

/// Running statistics of the revealed values of one row (Welford update).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowStats {
    n: usize,
    sum: f64,
    mean: f64,
    m2: f64,
}

impl RowStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut s = RowStats::default();
        values.iter().for_each(|&v| s.push(v));
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// Undefined (`None`) before the first observation.
    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Unbiased sample variance; undefined for `n <= 1`.
    pub fn variance(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).max(0.0))
    }
}

/// Which union bound the log term of the radius accounts for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnionMode {
    /// `log(c N / delta)`.
    #[default]
    PerDocument,
    /// `log(c N T / delta)`: simultaneous over documents and sample sizes.
    PerDocumentAndSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiusConfig {
    /// Relaxation multiplier in `(0, 1]`.
    pub alpha_ef: f64,
    /// Error tolerance in `(0, 1)`.
    pub delta: f64,
    /// Constant inside the log term.
    pub c: f64,
    pub union_mode: UnionMode,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        RadiusConfig {
            alpha_ef: 1.0,
            delta: 0.01,
            c: 1.0,
            union_mode: UnionMode::PerDocument,
        }
    }
}

impl RadiusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ef > 0.0 && self.alpha_ef <= 1.0) {
            return Err(Error::config(format!(
                "alpha_ef must be in (0, 1], got {}",
                self.alpha_ef
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config(format!("c must be positive, got {}", self.c)));
        }
        Ok(())
    }

    fn log_term(&self, n_docs: usize, n_tokens: usize) -> f64 {
        let count = match self.union_mode {
            UnionMode::PerDocument => n_docs as f64,
            UnionMode::PerDocumentAndSize => n_docs as f64 * n_tokens as f64,
        };
        (self.c * count / self.delta).ln()
    }
}

/// `T * mean` of the revealed values; `None` when nothing is revealed.
pub fn estimated_score(stats: &RowStats, n_tokens: usize) -> Option<f64> {
    (stats.n() > 0).then(|| n_tokens as f64 * (stats.sum() / stats.n() as f64))
}

/// Deterministic row bounds: revealed values plus the lower (upper) support of hidden cells.
///
/// Accumulates in column order, so a fully revealed row yields exactly
/// [`MaxSimOracle::full_score`].
pub fn hard_bounds(ledger: &ObservationLedger, bounds: &CellBounds, i: usize) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for t in 0..bounds.n_tokens() {
        match ledger.value(i, t) {
            Some(v) => {
                lo += v;
                hi += v;
            }
            None => {
                lo += bounds.lo(i, t);
                hi += bounds.hi(i, t);
            }
        }
    }
    (lo, hi)
}

/// Sample standard deviation (divisor `n - 1`); undefined for `n <= 1`.
pub fn empirical_std(stats: &RowStats) -> Option<f64> {
    stats.variance().map(f64::sqrt)
}

/// Finite-population correction for `n` draws without replacement out of `T`.
pub fn fp_correction(n: usize, n_tokens: usize) -> Result<f64> {
    if n == 0 || n > n_tokens {
        return Err(Error::usage(format!(
            "fp_correction needs 1 <= n <= T, got n = {n}, T = {n_tokens}"
        )));
    }
    let (n, t) = (n as f64, n_tokens as f64);
    Ok(if n <= t / 2.0 {
        1.0 - (n - 1.0) / t
    } else {
        (1.0 - n / t) * (1.0 + 1.0 / n)
    })
}

/// `alpha * T * sigma * sqrt(2 log(c N / delta) / n) * sqrt(rho_n)`, or `+inf` when `n <= 1`.
pub fn effective_radius(stats: &RowStats, n_tokens: usize, cfg: &RadiusConfig, n_docs: usize) -> f64 {
    let n = stats.n();
    let Some(sigma) = empirical_std(stats) else {
        return f64::INFINITY;
    };
    let rho = fp_correction(n, n_tokens).unwrap_or(0.0);
    let shrink = (2.0 * cfg.log_term(n_docs, n_tokens) / n as f64).sqrt();
    cfg.alpha_ef * n_tokens as f64 * sigma * shrink * rho.sqrt()
}

/// Clips `[S_hat - r, S_hat + r]` into the hard interval.
///
/// When the statistical interval lies entirely outside the hard one, the
/// result collapses onto the nearest hard endpoint, so `hard_lo <= lcb <= ucb
/// <= hard_hi` always holds.
pub fn decision_interval(hard: (f64, f64), est: Option<f64>, radius: f64) -> (f64, f64) {
    let (hard_lo, hard_hi) = hard;
    match est {
        None => (hard_lo, hard_hi),
        Some(s) => {
            let lcb = (s - radius).clamp(hard_lo, hard_hi);
            let ucb = (s + radius).clamp(hard_lo, hard_hi);
            (lcb, ucb)
        }
    }
}

/// Everything the selection loop needs to know about one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionState {
    pub est_score: Option<f64>,
    pub hard_lo: f64,
    pub hard_hi: f64,
    pub radius: f64,
    pub lcb: f64,
    pub ucb: f64,
    pub n_observed: usize,
    pub n_tokens: usize,
}

impl DecisionState {
    /// Pass `radius = None` to decide on the hard bounds alone (radius `+inf`).
    pub fn compute(ledger: &ObservationLedger, bounds: &CellBounds, i: usize, radius: Option<&RadiusConfig>) -> Self {
        let stats = ledger.row_stats(i);
        let n_tokens = bounds.n_tokens();
        let est_score = estimated_score(stats, n_tokens);
        let hard = hard_bounds(ledger, bounds, i);
        let radius = match radius {
            Some(cfg) => effective_radius(stats, n_tokens, cfg, bounds.n_docs()),
            None => f64::INFINITY,
        };
        let (lcb, ucb) = decision_interval(hard, est_score, radius);
        DecisionState {
            est_score,
            hard_lo: hard.0,
            hard_hi: hard.1,
            radius,
            lcb,
            ucb,
            n_observed: stats.n(),
            n_tokens,
        }
    }

    pub fn width(&self) -> f64 {
        self.ucb - self.lcb
    }

    pub fn is_complete(&self) -> bool {
        self.n_observed == self.n_tokens
    }

    /// Score used to form the tentative Top-K: the estimate, the hard midpoint
    /// before any reveal, and the exact column-order sum once the row is complete.
    pub fn ranking_score(&self) -> f64 {
        if self.is_complete() {
            self.hard_lo
        } else {
            self.est_score.unwrap_or(0.5 * (self.hard_lo + self.hard_hi))
        }
    }
}
