//! Adaptive Top-K identification over the MaxSim matrix.
//!
//! Each iteration forms the tentative Top-K by ranking score, finds the
//! weakest winner (smallest LCB inside) and the strongest loser (largest UCB
//! outside), and stops once `LCB(weakest winner) >= UCB(strongest loser)`.
//! Otherwise one more cell is revealed in whichever of the two rows has the
//! wider decision interval.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{CellBounds, DecisionState, RadiusConfig};
use crate::oracle::{MaxSimOracle, ObservationLedger, Reveal};
use crate::rank::{ceil_fraction, top_k_indices};
use crate::rng::{self, RunRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreMode {
    /// One random cell per row up front, then epsilon-greedy token choice.
    #[default]
    EpsilonGreedy,
    /// A uniform random `gamma_init` fraction of the matrix up front, then max-width token choice.
    StaticWarmup,
    /// No warm-up; tokens are always drawn uniformly from the unrevealed part of the row.
    UniformRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub k: usize,
    pub epsilon: f64,
    pub explore: ExploreMode,
    pub gamma_init: f64,
    pub seed: u64,
    pub radius: RadiusConfig,
    /// Decide on deterministic bounds only (the radius is treated as `+inf`).
    pub hard_only: bool,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            k: 5,
            epsilon: 0.1,
            explore: ExploreMode::EpsilonGreedy,
            gamma_init: 0.0,
            seed: 0,
            radius: RadiusConfig::default(),
            hard_only: false,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_init) {
            return Err(Error::config(format!(
                "gamma_init must be in [0, 1], got {}",
                self.gamma_init
            )));
        }
        self.radius.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The tentative Top-K was separated from the rest.
    Separation,
    /// Every cell was revealed without separation.
    Exhaustion,
    /// A static method spent its fixed budget.
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Returned rows, best first.
    pub topk: Vec<usize>,
    pub coverage: f64,
    pub reveals: Vec<Reveal>,
    pub iterations: usize,
    pub terminated_by: Termination,
}

impl RunResult {
    pub(crate) fn from_ledger(
        topk: Vec<usize>,
        ledger: ObservationLedger,
        iterations: usize,
        terminated_by: Termination,
    ) -> Self {
        RunResult {
            topk,
            coverage: ledger.coverage(),
            reveals: ledger.into_trace(),
            iterations,
            terminated_by,
        }
    }
}

/// One side of the weakest-winner / strongest-loser comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contender {
    pub row: usize,
    pub width: f64,
    /// Whether the row still has unrevealed cells.
    pub open: bool,
}

/// The contender with the wider interval; ties go to the weakest winner.
///
/// A fully revealed row is never chosen over an open one. Returns `None` when
/// both rows are fully revealed.
pub fn select_ambiguous(winner: Contender, loser: Contender) -> Option<usize> {
    match (winner.open, loser.open) {
        (true, true) => Some(if loser.width > winner.width {
            loser.row
        } else {
            winner.row
        }),
        (true, false) => Some(winner.row),
        (false, true) => Some(loser.row),
        (false, false) => None,
    }
}

/// With probability `epsilon` a uniformly random unrevealed column, otherwise
/// the unrevealed column with the widest cell bounds (lowest index on ties).
pub fn select_token(unrevealed: &[usize], widths: &[f64], epsilon: f64, rng: &mut RunRng) -> Result<usize> {
    match unrevealed {
        [] => Err(Error::usage("select_token called on a fully revealed row")),
        [only] => Ok(*only),
        _ => {
            if rng.random::<f64>() < epsilon {
                Ok(unrevealed[rng.random_range(0..unrevealed.len())])
            } else {
                let mut best = unrevealed[0];
                for &t in &unrevealed[1..] {
                    if widths[t] > widths[best] {
                        best = t;
                    }
                }
                Ok(best)
            }
        }
    }
}

/// Reveals `ceil(gamma_init * N * T)` distinct cells drawn uniformly over the whole matrix.
pub fn static_warmup(
    oracle: &MaxSimOracle,
    ledger: &mut ObservationLedger,
    gamma_init: f64,
    rng: &mut RunRng,
) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma_init) {
        return Err(Error::usage(format!("gamma_init must be in [0, 1], got {gamma_init}")));
    }
    let (n, t) = (oracle.n_docs(), oracle.n_tokens());
    let count = ceil_fraction(gamma_init, n * t);
    for cell in sample(rng, n * t, count) {
        let (i, c) = (cell / t, cell % t);
        if !ledger.is_observed(i, c) {
            ledger.reveal(oracle, i, c)?;
        }
    }
    Ok(())
}

/// Reveals one uniformly random cell in every row that has none yet.
pub fn init_one_per_row(oracle: &MaxSimOracle, ledger: &mut ObservationLedger, rng: &mut RunRng) -> Result<()> {
    for i in 0..oracle.n_docs() {
        if ledger.row_stats(i).n() == 0 {
            let c = rng.random_range(0..oracle.n_tokens());
            ledger.reveal(oracle, i, c)?;
        }
    }
    Ok(())
}

/// Runs the adaptive loop with the RNG stream `(cfg.seed, 0)`.
pub fn run(oracle: &MaxSimOracle, bounds: &CellBounds, cfg: &BanditConfig) -> Result<RunResult> {
    run_with_rng(oracle, bounds, cfg, &mut rng::stream(cfg.seed, 0))
}

pub fn run_with_rng(
    oracle: &MaxSimOracle,
    bounds: &CellBounds,
    cfg: &BanditConfig,
    rng: &mut RunRng,
) -> Result<RunResult> {
    cfg.validate()?;
    bounds.check_shape(oracle)?;
    let (n, k) = (oracle.n_docs(), cfg.k);
    if k > n {
        return Err(Error::usage(format!("K = {k} exceeds N = {n}")));
    }
    let mut ledger = ObservationLedger::new(n, oracle.n_tokens());
    if k == 0 {
        return Ok(RunResult::from_ledger(Vec::new(), ledger, 0, Termination::Separation));
    }

    match cfg.explore {
        ExploreMode::EpsilonGreedy => init_one_per_row(oracle, &mut ledger, rng)?,
        ExploreMode::StaticWarmup => static_warmup(oracle, &mut ledger, cfg.gamma_init, rng)?,
        ExploreMode::UniformRow => {}
    }
    let epsilon = match cfg.explore {
        ExploreMode::EpsilonGreedy => cfg.epsilon,
        ExploreMode::StaticWarmup => 0.0,
        ExploreMode::UniformRow => 1.0,
    };
    let radius = (!cfg.hard_only).then_some(&cfg.radius);

    let mut states: Vec<DecisionState> = (0..n)
        .map(|i| DecisionState::compute(&ledger, bounds, i, radius))
        .collect();
    let mut scores: Vec<f64> = states.iter().map(DecisionState::ranking_score).collect();
    let mut in_top = vec![false; n];
    let mut iterations = 0;

    loop {
        iterations += 1;
        let top = top_k_indices(&scores, k);
        in_top.iter_mut().for_each(|m| *m = false);
        top.iter().for_each(|&i| in_top[i] = true);

        let weakest = weakest_winner(&top, &states);
        let Some(strongest) = strongest_loser(&in_top, &states) else {
            return Ok(RunResult::from_ledger(top, ledger, iterations, Termination::Separation));
        };
        if states[weakest].lcb >= states[strongest].ucb {
            return Ok(RunResult::from_ledger(top, ledger, iterations, Termination::Separation));
        }

        let contender = |i: usize| Contender {
            row: i,
            width: states[i].width(),
            open: !ledger.is_row_full(i),
        };
        let Some(row) = select_ambiguous(contender(weakest), contender(strongest)) else {
            return Ok(RunResult::from_ledger(top, ledger, iterations, Termination::Exhaustion));
        };
        let unrevealed = ledger.unobserved_columns(row);
        let col = select_token(&unrevealed, &bounds.row_widths(row), epsilon, rng)?;
        ledger.reveal(oracle, row, col)?;
        states[row] = DecisionState::compute(&ledger, bounds, row, radius);
        scores[row] = states[row].ranking_score();
    }
}

fn weakest_winner(top: &[usize], states: &[DecisionState]) -> usize {
    let mut best = top[0];
    for &i in &top[1..] {
        let (a, b) = (states[i].lcb, states[best].lcb);
        if a < b || (a == b && i < best) {
            best = i;
        }
    }
    best
}

fn strongest_loser(in_top: &[bool], states: &[DecisionState]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in states.iter().enumerate() {
        if in_top[i] {
            continue;
        }
        match best {
            Some(b) if s.ucb <= states[b].ucb => {}
            _ => best = Some(i),
        }
    }
    best
}
