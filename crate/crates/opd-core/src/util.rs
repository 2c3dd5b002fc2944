//! Small shared numeric helpers.
//!
//! Log-space reductions, norms, total variation, Euclidean simplex
//! projection, and deterministic generator splitting. Everything here is
//! allocation-light and pure; the policy/solver modules build on these so
//! that numerically delicate pieces live in one place.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `ln(sum_i exp(v_i))` with max subtraction.
///
/// Entries of `f64::NEG_INFINITY` (log of zero mass) are skipped; if every
/// entry is `-inf` the result is `-inf`. Stable for arguments of magnitude
/// well past `exp`'s overflow range, which routine score/KL-coefficient
/// ratios reach (e.g. scores of `S/beta = 20` at realistic coefficients).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Normalize `row` in place to sum to one.
///
/// Callers guarantee a strictly positive sum.
pub fn normalize_in_place(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `sum_i |a_i - b_i|` (l1 distance).
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `sum_i (a_i - b_i)^2` (squared l2 distance).
pub fn l2_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Total variation distance between two probability rows: `0.5 * l1`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * l1_distance(p, q)
}

/// Euclidean projection of `v` onto the probability simplex.
///
/// Sort-based thresholding: find the largest support size `k` with
/// `v_(k) + (1 - sum of top k)/k > 0`, clip everything below the implied
/// threshold. Exact up to rounding; O(n log n).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Deterministically split a child generator off `rng`.
///
/// All randomness in the crate flows from explicit seeds; independent
/// sub-tasks (per-seed certification runs, noise streams) each get a child
/// seeded from the parent stream so adding a consumer never perturbs the
/// draws of another.
pub fn split_rng(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}

/// Generator seeded directly from an integer seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
