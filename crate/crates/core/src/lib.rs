//! Adaptive late-interaction reranking.
//!
//! A ColBERT-style score is the row sum of an `N x T` matrix of MaxSim values
//! (documents by query tokens). Computing every cell is the dominant cost of
//! exact reranking. This crate treats the matrix as lazily revealed and runs
//! an LUCB-style Top-K identification loop over it: each document keeps a
//! hybrid interval built from deterministic per-cell bounds and a
//! variance-adaptive finite-population radius, and cells are revealed only
//! for the documents whose membership in the Top-K is still ambiguous.
//!
//! Module map:
//!
//! - [`oracle`]: embeddings, the MaxSim oracle, and the reveal ledger.
//! - [`formats`]: the `CBM1` / `CBH1` binary files and JSON-lines manifests.
//! - [`bounds`]: per-cell bounds, row statistics, radius and decision interval.
//! - [`bandit`]: the adaptive reveal/stop loop.
//! - [`baselines`]: static Doc-Uniform / Doc-TopMargin reveal and full reranking.
//! - [`pipeline`]: exact per-token kNN candidate generation and ANN-derived bounds.
//! - [`eval`]: Overlap@K, IR metrics, qrels, and parameter sweeps.
//! - [`synth`]: synthetic matrices and embeddings.
//! - [`experiment`]: config-driven `run` / `gen` / `verify` commands behind the CLI.

pub mod bandit;
pub mod baselines;
pub mod bounds;
mod error;
pub mod eval;
pub mod experiment;
pub mod formats;
pub mod oracle;
pub mod pipeline;
mod rank;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
