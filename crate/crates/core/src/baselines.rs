//! Static reveal baselines and exhaustive reranking.
//!
//! Both baselines spend a fixed budget of `B = ceil(gamma * T)` cells in every
//! row and rank documents by the sum of what they revealed.

use rand::seq::index::sample;

use crate::bandit::{RunResult, Termination};
use crate::bounds::CellBounds;
use crate::oracle::{MaxSimOracle, ObservationLedger};
use crate::rank::{ceil_fraction, top_k_indices};
use crate::rng::{self, RunRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetConfig {
    pub gamma: f64,
    pub seed: u64,
}

impl BudgetConfig {
    /// `B = ceil(gamma * T)`, required to satisfy `1 <= B <= T`.
    pub fn cells_per_row(&self, n_tokens: usize) -> Result<usize> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::usage(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        let b = ceil_fraction(self.gamma, n_tokens);
        if b == 0 || b > n_tokens {
            return Err(Error::usage(format!(
                "budget {b} cells per row outside [1, {n_tokens}]"
            )));
        }
        Ok(b)
    }
}

fn check_k(oracle: &MaxSimOracle, k: usize) -> Result<()> {
    if k > oracle.n_docs() {
        return Err(Error::usage(format!("K = {k} exceeds N = {}", oracle.n_docs())));
    }
    Ok(())
}

/// Reveals the given columns of every row, then ranks rows by their partial sums.
fn reveal_and_rank(
    oracle: &MaxSimOracle,
    k: usize,
    mut columns_for: impl FnMut(usize) -> Vec<usize>,
) -> Result<RunResult> {
    let mut ledger = ObservationLedger::new(oracle.n_docs(), oracle.n_tokens());
    let mut partial = Vec::with_capacity(oracle.n_docs());
    for i in 0..oracle.n_docs() {
        let mut cols = columns_for(i);
        for &t in &cols {
            ledger.reveal(oracle, i, t)?;
        }
        // column order, so a full budget reproduces the exact row sum
        cols.sort_unstable();
        partial.push(cols.iter().map(|&t| ledger.value(i, t).unwrap_or(0.0)).sum::<f64>());
    }
    let topk = top_k_indices(&partial, k);
    Ok(RunResult::from_ledger(
        topk,
        ledger,
        oracle.n_docs(),
        Termination::Budget,
    ))
}

/// Doc-Uniform: `B` uniformly random distinct columns per row.
pub fn doc_uniform(oracle: &MaxSimOracle, k: usize, gamma: f64, seed: u64) -> Result<RunResult> {
    doc_uniform_with_rng(oracle, k, gamma, &mut rng::stream(seed, 0))
}

pub fn doc_uniform_with_rng(oracle: &MaxSimOracle, k: usize, gamma: f64, rng: &mut RunRng) -> Result<RunResult> {
    check_k(oracle, k)?;
    let t = oracle.n_tokens();
    let b = BudgetConfig { gamma, seed: 0 }.cells_per_row(t)?;
    reveal_and_rank(oracle, k, |_| sample(rng, t, b).into_vec())
}

/// Doc-TopMargin: the `B` columns with the widest cell bounds per row (lowest index on ties).
pub fn doc_top_margin(oracle: &MaxSimOracle, bounds: &CellBounds, k: usize, gamma: f64) -> Result<RunResult> {
    check_k(oracle, k)?;
    bounds.check_shape(oracle)?;
    let t = oracle.n_tokens();
    let b = BudgetConfig { gamma, seed: 0 }.cells_per_row(t)?;
    reveal_and_rank(oracle, k, |i| widest_columns(&bounds.row_widths(i), b))
}

/// Indices of the `b` largest widths, ties to the lower index.
pub fn widest_columns(widths: &[f64], b: usize) -> Vec<usize> {
    top_k_indices(widths, b)
}

/// Reveals every cell; the result is the exact Top-K.
pub fn full_rerank(oracle: &MaxSimOracle, k: usize) -> Result<RunResult> {
    check_k(oracle, k)?;
    let all: Vec<usize> = (0..oracle.n_tokens()).collect();
    reveal_and_rank(oracle, k, |_| all.clone())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::Rng;

    use super::*;

    fn random_oracle(seed: u64, n: usize, t: usize) -> MaxSimOracle {
        let mut r = rng::stream(seed, 5);
        let values = (0..n * t).map(|_| r.random::<f32>()).collect();
        MaxSimOracle::from_matrix(n, t, values, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn doc_uniform_budget_accounting() {
        let o = random_oracle(0, 3, 8);
        let res = doc_uniform(&o, 1, 0.5, 4).unwrap();
        assert_eq!(res.reveals.len(), 12);
        assert_eq!(res.coverage, 0.5);
        for i in 0..3 {
            let cols: BTreeSet<usize> = res.reveals.iter().filter(|r| r.row == i).map(|r| r.col).collect();
            assert_eq!(cols.len(), 4);
        }
        let minimal = doc_uniform(&o, 1, 1.0 / 8.0, 4).unwrap();
        assert_eq!(minimal.reveals.len(), 3);
        assert_eq!(minimal.coverage, 1.0 / 8.0);
    }

    #[test]
    fn full_budget_gives_exact_topk() {
        let o = random_oracle(1, 9, 6);
        let exact = o.exact_topk(4).unwrap();
        assert_eq!(doc_uniform(&o, 4, 1.0, 3).unwrap().topk, exact);
        let b = CellBounds::uniform(9, 6, 0.0, 1.0).unwrap();
        assert_eq!(doc_top_margin(&o, &b, 4, 1.0).unwrap().topk, exact);
        let full = full_rerank(&o, 4).unwrap();
        assert_eq!(full.topk, exact);
        assert_eq!(full.coverage, 1.0);
        assert_eq!(full.reveals.len(), 54);
    }

    #[test]
    fn widest_columns_examples() {
        assert_eq!(widest_columns(&[0.5; 6], 3), vec![0, 1, 2]);
        let mut picked = widest_columns(&[0.1, 0.9, 0.5, 0.7], 2);
        picked.sort_unstable();
        assert_eq!(picked, vec![1, 3]);
    }

    #[test]
    fn top_margin_reveals_widest_cells() {
        let o = random_oracle(2, 2, 4);
        let lo = vec![0.0; 8];
        let hi = vec![0.1, 0.9, 0.5, 0.7, 1.0, 1.0, 1.0, 1.0];
        let b = CellBounds::from_parts(2, 4, lo, hi).unwrap();
        let res = doc_top_margin(&o, &b, 1, 0.5).unwrap();
        let row0: BTreeSet<usize> = res.reveals.iter().filter(|r| r.row == 0).map(|r| r.col).collect();
        let row1: BTreeSet<usize> = res.reveals.iter().filter(|r| r.row == 1).map(|r| r.col).collect();
        assert_eq!(row0, BTreeSet::from([1, 3]));
        assert_eq!(row1, BTreeSet::from([0, 1]));
        assert_eq!(res, doc_top_margin(&o, &b, 1, 0.5).unwrap());
    }

    #[test]
    fn invalid_budgets_are_rejected() {
        let o = random_oracle(3, 2, 4);
        assert!(doc_uniform(&o, 1, 0.0, 1).is_err());
        assert!(doc_uniform(&o, 1, 1.5, 1).is_err());
        assert!(doc_uniform(&o, 3, 0.5, 1).is_err());
    }

    #[test]
    fn doc_uniform_is_seed_deterministic() {
        let o = random_oracle(4, 10, 16);
        assert_eq!(doc_uniform(&o, 3, 0.3, 9).unwrap(), doc_uniform(&o, 3, 0.3, 9).unwrap());
    }
}
