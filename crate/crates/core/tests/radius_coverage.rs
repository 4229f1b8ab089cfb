//! Simultaneous coverage of the statistical interval `[S_hat - r, S_hat + r]`
//! under uniform-within-row sampling, alpha = 1, per-document-and-size union.
//!
//! Each trial draws a fresh synthetic matrix and an independent uniform reveal
//! order per row, then checks the true row sum against the interval after
//! every reveal count `n` (radius is infinite for `n <= 1`). A trial fails if
//! any row misses at any `n`; the failure frequency must stay within
//! `delta + 3 sqrt(delta (1 - delta) / trials)`.

use col_bandit::bounds::{effective_radius, estimated_score, RadiusConfig, RowStats, UnionMode};
use col_bandit::rng;
use col_bandit::synth::{gen_matrix, ScoreProfile, SynthSpec};
use rand::seq::SliceRandom;

const TRIALS: u64 = 500;
const DELTA: f64 = 0.1;

fn trial_fails(trial: u64, n: usize, t: usize, profile: ScoreProfile) -> bool {
    let spec = SynthSpec {
        n,
        t,
        profile,
        boundary_k: 1,
        value_range: (0.0, 1.0),
        noise_scale: 0.1,
        seed: trial,
    };
    let m = gen_matrix(&spec).unwrap();
    let cfg = RadiusConfig {
        alpha_ef: 1.0,
        delta: DELTA,
        c: 1.0,
        union_mode: UnionMode::PerDocumentAndSize,
    };
    let mut r = rng::stream(trial, 3);
    (0..n).any(|i| {
        let row: Vec<f64> = m.values[i * t..(i + 1) * t].iter().map(|&v| v as f64).collect();
        let truth = m.row_sum(i);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut r);
        let mut stats = RowStats::default();
        order.iter().any(|&col| {
            stats.push(row[col]);
            let est = estimated_score(&stats, t).unwrap();
            let radius = effective_radius(&stats, t, &cfg, n);
            (truth - est).abs() > radius
        })
    })
}

fn failure_rate(n: usize, t: usize, profile: ScoreProfile) -> f64 {
    (0..TRIALS).filter(|&s| trial_fails(s, n, t, profile)).count() as f64 / TRIALS as f64
}

fn slack() -> f64 {
    3.0 * (DELTA * (1.0 - DELTA) / TRIALS as f64).sqrt()
}

#[test]
fn interval_covers_all_rows_and_sizes_with_probability_one_minus_delta() {
    let rates: Vec<(&str, f64)> = vec![
        (
            "N=20 clustered",
            failure_rate(20, 32, ScoreProfile::ClusteredNearBoundary),
        ),
        ("N=20 uniform-random", failure_rate(20, 32, ScoreProfile::UniformRandom)),
        ("N=1", failure_rate(1, 32, ScoreProfile::UniformRandom)),
    ];
    let limit = DELTA + slack();
    println!("simultaneous-coverage failure rates (limit {limit:.4}): {rates:?}");
    for (name, rate) in &rates {
        assert!(*rate <= limit, "{name}: failure rate {rate} exceeds {limit}");
    }
}

#[test]
fn full_rows_are_always_covered() {
    // sanity: at n = T the radius is 0 and the estimate equals the row sum
    let m = gen_matrix(&SynthSpec {
        n: 5,
        t: 16,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let cfg = RadiusConfig::default();
    for i in 0..5 {
        let row: Vec<f64> = m.values[i * 16..(i + 1) * 16].iter().map(|&v| v as f64).collect();
        let stats = RowStats::from_values(&row);
        assert_eq!(effective_radius(&stats, 16, &cfg, 5), 0.0);
        assert!((estimated_score(&stats, 16).unwrap() - m.row_sum(i)).abs() < 1e-9);
    }
}
