//! Problem instances: domain types, validation, canonical and seeded random
//! generation, and JSON persistence.
//!
//! A problem instance fixes a finite prompt set with a sampling
//! distribution, a full-support reference policy, weighted soft reward
//! tables (the objective), thresholded hard reward tables (the
//! constraints), and the KL coefficient `beta`. Hard rewards are stored both
//! raw and shifted (`shifted = raw - threshold`) because every downstream
//! quantity — constraint values, aggregated rewards, dual gradients — is
//! written in terms of the shifted tables.
//!
//! Instances are immutable after construction and safe to share across
//! threads; generation and I/O are single-threaded per call.
//!
//! # File format
//!
//! `save`/`load` use a single JSON document whose fields mirror
//! [`ProblemSpec`] exactly: explicit dimension fields and row-major
//! matrices. Reals are serialized as shortest round-trip decimals, so
//! `load(save(spec))` reproduces every float bit-exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{OpdError, Result};
use crate::util;

/// Row-sum / weight-sum / distribution-sum tolerance for validation.
pub const SUM_TOL: f64 = 1e-12;

/// A `|prompts| x |responses|` table of real rewards, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    /// `values[x][y]` is the reward of response `y` under prompt `x`.
    pub values: Vec<Vec<f64>>,
}

impl RewardTable {
    /// Table from rows; callers guarantee rectangular shape.
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        RewardTable { values }
    }

    /// Constant-zero table of the given shape.
    pub fn zeros(num_prompts: usize, num_responses: usize) -> Self {
        RewardTable {
            values: vec![vec![0.0; num_responses]; num_prompts],
        }
    }

    /// Entry accessor.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x][y]
    }

    /// Largest absolute entry (0 for an empty table).
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

/// A row-stochastic policy: one probability row over responses per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// `probs[x][y]` is the probability of response `y` given prompt `x`.
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// Policy from rows; rows are used as given (validation is separate).
    pub fn new(probs: Vec<Vec<f64>>) -> Self {
        TabularPolicy { probs }
    }

    /// Uniform policy of the given shape.
    pub fn uniform(num_prompts: usize, num_responses: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / num_responses as f64; num_responses]; num_prompts],
        }
    }

    /// Number of prompt rows.
    pub fn num_prompts(&self) -> usize {
        self.probs.len()
    }

    /// Number of response columns (0 for an empty policy).
    pub fn num_responses(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Probability row for prompt `x`.
    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x]
    }

    /// Largest per-row total variation distance to `other`.
    ///
    /// Rows are compared pairwise; callers guarantee matching shapes.
    pub fn max_row_tv(&self, other: &TabularPolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| util::tv_distance(p, q))
            .fold(0.0, f64::max)
    }

    /// Smallest probability entry.
    pub fn min_entry(&self) -> f64 {
        self.probs
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// One hard constraint: a raw reward table, its threshold, and the shifted
/// table the solvers actually consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardConstraint {
    /// Raw reward table `R_j`.
    pub reward: RewardTable,
    /// Threshold `b_j`; the constraint is `E[R_j] >= b_j`.
    pub threshold: f64,
    /// Shifted table `R_j - b_j`, stored so the constraint reads `E[shifted] >= 0`.
    pub shifted: RewardTable,
}

impl HardConstraint {
    /// Build a constraint, deriving the shifted table from `reward - threshold`.
    pub fn new(reward: RewardTable, threshold: f64) -> Self {
        let shifted = RewardTable::new(
            reward
                .values
                .iter()
                .map(|row| row.iter().map(|v| v - threshold).collect())
                .collect(),
        );
        HardConstraint {
            reward,
            threshold,
            shifted,
        }
    }
}

/// A complete constrained alignment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Number of prompts `|X|`.
    pub num_prompts: usize,
    /// Number of responses `|Y|`.
    pub num_responses: usize,
    /// Prompt sampling distribution `D`, length `|X|`.
    pub prompt_dist: Vec<f64>,
    /// Reference policy `pi_ref` (full support: every entry `>= p_min`).
    pub ref_policy: TabularPolicy,
    /// Soft reward tables with convex weights `w_k` summing to one.
    pub soft_rewards: Vec<(RewardTable, f64)>,
    /// Hard constraints (raw table, threshold, shifted table).
    pub hard_rewards: Vec<HardConstraint>,
    /// KL regularization coefficient `beta > 0`.
    pub beta: f64,
    /// Declared bound on reward magnitudes: every raw and shifted entry
    /// satisfies `|entry| <= r_max`.
    pub r_max: f64,
    /// Declared reference-policy floor: every `pi_ref` entry is `>= p_min`.
    pub p_min: f64,
}

impl ProblemSpec {
    /// Number of hard constraints `|H|`.
    pub fn num_constraints(&self) -> usize {
        self.hard_rewards.len()
    }
}

/// Result of [`validate`]: a (possibly empty) list of violated invariants.
///
/// Each entry names the failed invariant and the offending index, e.g.
/// `"prompt_dist sums to 1.2 (must sum to 1 within 1e-12)"`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Human-readable violation descriptions; empty iff the spec is valid.
    pub violations: Vec<String>,
}

impl ValidationReport {
    /// True iff no invariant was violated.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Render as one line per violation.
    pub fn to_message(&self) -> String {
        self.violations.join("\n")
    }
}

/// Check every structural invariant of `spec` and report all violations.
///
/// This is a reporting operation: it never errors, and an empty report is
/// the definition of a valid instance. Checked invariants:
///
/// - positive dimensions; rectangular tables and policies of matching shape;
/// - `prompt_dist` entries finite, nonnegative, summing to 1 within 1e-12;
/// - reference-policy rows summing to 1 within 1e-12, min entry `>= p_min`
///   with `p_min > 0` (full support);
/// - soft weights nonnegative and summing to 1 within 1e-12;
/// - all reward entries finite with `|entry| <= r_max`, `r_max > 0`;
/// - shifted tables equal to `raw - threshold` entrywise;
/// - `beta > 0`.
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut v = Vec::new();
    let nx = spec.num_prompts;
    let ny = spec.num_responses;

    if nx == 0 {
        v.push("num_prompts is 0 (must be positive)".to_string());
    }
    if ny == 0 {
        v.push("num_responses is 0 (must be positive)".to_string());
    }

    // Prompt distribution.
    if spec.prompt_dist.len() != nx {
        v.push(format!(
            "prompt_dist has length {} (expected num_prompts = {})",
            spec.prompt_dist.len(),
            nx
        ));
    }
    for (x, &d) in spec.prompt_dist.iter().enumerate() {
        if !d.is_finite() {
            v.push(format!("prompt_dist[{x}] is not finite"));
        } else if d < 0.0 {
            v.push(format!("prompt_dist[{x}] = {d} is negative"));
        }
    }
    let dist_sum: f64 = spec.prompt_dist.iter().sum();
    if spec.prompt_dist.iter().all(|d| d.is_finite()) && (dist_sum - 1.0).abs() > SUM_TOL {
        v.push(format!(
            "prompt_dist sums to {dist_sum} (must sum to 1 within 1e-12)"
        ));
    }

    // Reference policy: shape, row-stochasticity, full support at p_min.
    if spec.p_min <= 0.0 {
        v.push(format!(
            "p_min = {} (the full-support floor must be strictly positive)",
            spec.p_min
        ));
    }
    check_policy_shape(&spec.ref_policy, nx, ny, "ref_policy", &mut v);
    for (x, row) in spec.ref_policy.probs.iter().enumerate() {
        let row_sum: f64 = row.iter().sum();
        if row.iter().all(|p| p.is_finite()) && (row_sum - 1.0).abs() > SUM_TOL {
            v.push(format!(
                "ref_policy row {x} sums to {row_sum} (must sum to 1 within 1e-12)"
            ));
        }
        for (y, &p) in row.iter().enumerate() {
            if !p.is_finite() {
                v.push(format!("ref_policy[{x}][{y}] is not finite"));
            } else if p < spec.p_min {
                v.push(format!(
                    "ref_policy[{x}][{y}] = {p} violates the full-support floor p_min = {}",
                    spec.p_min
                ));
            }
        }
    }

    // Soft weights.
    let weight_sum: f64 = spec.soft_rewards.iter().map(|(_, w)| *w).sum();
    for (k, (_, w)) in spec.soft_rewards.iter().enumerate() {
        if !w.is_finite() || *w < 0.0 {
            v.push(format!("soft weight w[{k}] = {w} is not a finite nonnegative real"));
        }
    }
    if !spec.soft_rewards.is_empty() && (weight_sum - 1.0).abs() > SUM_TOL {
        v.push(format!(
            "soft weights sum to {weight_sum} (must sum to 1 within 1e-12)"
        ));
    }
    if spec.soft_rewards.is_empty() {
        v.push("soft_rewards is empty (at least one weighted objective required)".to_string());
    }

    // Reward magnitude bound.
    if !(spec.r_max > 0.0) {
        v.push(format!("r_max = {} (must be strictly positive)", spec.r_max));
    }
    for (k, (table, _)) in spec.soft_rewards.iter().enumerate() {
        check_table(table, nx, ny, spec.r_max, &format!("soft_rewards[{k}]"), &mut v);
    }
    for (j, hc) in spec.hard_rewards.iter().enumerate() {
        check_table(&hc.reward, nx, ny, spec.r_max, &format!("hard_rewards[{j}].reward"), &mut v);
        check_table(
            &hc.shifted,
            nx,
            ny,
            spec.r_max,
            &format!("hard_rewards[{j}].shifted"),
            &mut v,
        );
        if !hc.threshold.is_finite() {
            v.push(format!("hard_rewards[{j}].threshold is not finite"));
        }
        // Reconstruction: shifted = raw - threshold entrywise.
        for (x, (raw_row, sh_row)) in hc.reward.values.iter().zip(&hc.shifted.values).enumerate() {
            for (y, (&raw, &sh)) in raw_row.iter().zip(sh_row).enumerate() {
                if (raw - hc.threshold - sh).abs() > 0.0 {
                    v.push(format!(
                        "hard_rewards[{j}].shifted[{x}][{y}] = {sh} does not reconstruct raw - threshold = {}",
                        raw - hc.threshold
                    ));
                }
            }
        }
    }

    // KL coefficient.
    if !(spec.beta > 0.0) || !spec.beta.is_finite() {
        v.push(format!("beta = {} (must be a finite positive real)", spec.beta));
    }

    ValidationReport { violations: v }
}

fn check_policy_shape(
    policy: &TabularPolicy,
    nx: usize,
    ny: usize,
    name: &str,
    v: &mut Vec<String>,
) {
    if policy.num_prompts() != nx {
        v.push(format!(
            "{name} has {} rows (expected num_prompts = {nx})",
            policy.num_prompts()
        ));
    }
    for (x, row) in policy.probs.iter().enumerate() {
        if row.len() != ny {
            v.push(format!(
                "{name} row {x} has length {} (expected num_responses = {ny})",
                row.len()
            ));
        }
    }
}

fn check_table(
    table: &RewardTable,
    nx: usize,
    ny: usize,
    r_max: f64,
    name: &str,
    v: &mut Vec<String>,
) {
    if table.values.len() != nx {
        v.push(format!(
            "{name} has {} rows (expected num_prompts = {nx})",
            table.values.len()
        ));
    }
    for (x, row) in table.values.iter().enumerate() {
        if row.len() != ny {
            v.push(format!(
                "{name} row {x} has length {} (expected num_responses = {ny})",
                row.len()
            ));
        }
        for (y, &val) in row.iter().enumerate() {
            if !val.is_finite() {
                v.push(format!("{name}[{x}][{y}] is not finite"));
            } else if val.abs() > r_max {
                v.push(format!(
                    "{name}[{x}][{y}] = {val} exceeds the declared bound r_max = {r_max}"
                ));
            }
        }
    }
}

/// The canonical single-prompt, two-response instance.
///
/// One prompt, two responses. The soft objective rewards the first response
/// (`R_s = (1, 0)`, weight 1); the hard constraint penalizes it
/// (`R_h = (-0.7, 0.3)`, threshold 0); the reference policy puts 0.3 on the
/// first response; `beta = 0.05`. The saddle point is analytic: equalizing
/// the aggregated scores `1 - 0.7*lambda = 0.3*lambda` gives
/// `lambda_star = 1`, at which both responses score 0.3 and the optimal
/// policy collapses onto the reference policy.
pub fn toy_instance() -> ProblemSpec {
    ProblemSpec {
        num_prompts: 1,
        num_responses: 2,
        prompt_dist: vec![1.0],
        ref_policy: TabularPolicy::new(vec![vec![0.3, 0.7]]),
        soft_rewards: vec![(RewardTable::new(vec![vec![1.0, 0.0]]), 1.0)],
        hard_rewards: vec![HardConstraint::new(
            RewardTable::new(vec![vec![-0.7, 0.3]]),
            0.0,
        )],
        beta: 0.05,
        r_max: 1.0,
        p_min: 0.3,
    }
}

/// Number of threshold resampling attempts before giving up.
const THRESHOLD_ATTEMPTS: usize = 1000;

/// Slater-margin target as a fraction of `r_max`.
const SLATER_FRACTION: f64 = 0.05;

/// Generate a seeded random instance.
///
/// `sizes = (num_prompts, num_responses, num_soft, num_hard)`. Sampling, in
/// a fixed order so instances are a pure function of the arguments:
///
/// - reward entries i.i.d. uniform on `[-r_max, r_max]`;
/// - reference-policy rows from a symmetric Dirichlet(1.0), then floored so
///   every entry is `>= p_floor` and renormalized (exact waterfill: floored
///   indices are pinned, the rest rescaled, repeated until stable);
/// - the prompt distribution from a symmetric Dirichlet(1.0) (entries are
///   almost surely strictly positive);
/// - soft weights i.i.d. uniform then normalized to sum to one;
/// - `beta` uniform on `[0.05, 0.5] * r_max`;
/// - thresholds `b_j` resampled uniformly between the constraint's
///   min-achievable and (max-achievable − target-margin) expected values
///   until the joint Slater margin, verified through
///   [`crate::lagrangian::slater_margin`], reaches `0.05 * r_max`.
///
/// The declared `r_max` on the result is the largest absolute entry across
/// all raw and shifted tables (the tightest bound that satisfies the
/// magnitude invariant after shifting).
///
/// # Errors
///
/// [`OpdError::InstanceRejection`] if no threshold draw reaches the margin
/// within 1000 attempts; [`OpdError::InvalidArgument`] for empty sizes or a
/// `p_floor` outside `(0, 1/num_responses)`.
pub fn random_instance(
    seed: u64,
    sizes: (usize, usize, usize, usize),
    r_max: f64,
    p_floor: f64,
) -> Result<ProblemSpec> {
    let (nx, ny, ns, nh) = sizes;
    if nx == 0 || ny == 0 || ns == 0 || nh == 0 {
        return Err(OpdError::InvalidArgument(format!(
            "sizes {sizes:?} must all be positive"
        )));
    }
    if !(r_max > 0.0) {
        return Err(OpdError::InvalidArgument(format!(
            "r_max = {r_max} must be strictly positive"
        )));
    }
    if !(p_floor > 0.0 && p_floor < 1.0 / ny as f64) {
        return Err(OpdError::InvalidArgument(format!(
            "p_floor = {p_floor} must lie in (0, 1/num_responses = {})",
            1.0 / ny as f64
        )));
    }

    let mut rng = util::rng_from_seed(seed);

    // Soft reward tables.
    let mut soft_tables = Vec::with_capacity(ns);
    for _ in 0..ns {
        soft_tables.push(sample_table(&mut rng, nx, ny, r_max));
    }
    // Hard reward tables (raw).
    let mut hard_tables = Vec::with_capacity(nh);
    for _ in 0..nh {
        hard_tables.push(sample_table(&mut rng, nx, ny, r_max));
    }

    // Reference policy rows: Dirichlet(1.0), floored, renormalized.
    let mut ref_rows = Vec::with_capacity(nx);
    for _ in 0..nx {
        let row = sample_dirichlet(&mut rng, ny);
        ref_rows.push(floor_and_renormalize(&row, p_floor));
    }
    let ref_policy = TabularPolicy::new(ref_rows);

    // Prompt distribution: Dirichlet(1.0); entries a.s. strictly positive.
    let prompt_dist = sample_dirichlet(&mut rng, nx);

    // Soft weights: uniform draws, normalized.
    let mut weights: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..1.0) + 1e-9).collect();
    util::normalize_in_place(&mut weights);

    // KL coefficient.
    let beta = rng.gen_range(0.05..0.5) * r_max;

    let soft_rewards: Vec<(RewardTable, f64)> =
        soft_tables.into_iter().zip(weights).collect();

    // Threshold selection: resample each b_j uniformly inside its feasible
    // band until the joint margin verifies.
    let xi_target = SLATER_FRACTION * r_max;
    let bands: Vec<(f64, f64)> = hard_tables
        .iter()
        .map(|t| achievable_band(&prompt_dist, t))
        .collect();

    let mut best_margin = f64::NEG_INFINITY;
    for _ in 0..THRESHOLD_ATTEMPTS {
        let thresholds: Vec<f64> = bands
            .iter()
            .map(|&(lo, hi)| {
                let upper = hi - xi_target;
                if upper <= lo {
                    lo
                } else {
                    rng.gen_range(lo..upper)
                }
            })
            .collect();

        let hard_rewards: Vec<HardConstraint> = hard_tables
            .iter()
            .cloned()
            .zip(&thresholds)
            .map(|(t, &b)| HardConstraint::new(t, b))
            .collect();

        let declared_r_max = declared_bound(&soft_rewards, &hard_rewards);
        let candidate = ProblemSpec {
            num_prompts: nx,
            num_responses: ny,
            prompt_dist: prompt_dist.clone(),
            ref_policy: ref_policy.clone(),
            soft_rewards: soft_rewards.clone(),
            hard_rewards,
            beta,
            r_max: declared_r_max,
            p_min: p_floor,
        };

        let (xi, _) = crate::lagrangian::slater_margin(&candidate);
        if xi >= xi_target {
            return Ok(candidate);
        }
        best_margin = best_margin.max(xi);
    }

    Err(OpdError::InstanceRejection {
        target: xi_target,
        attempts: THRESHOLD_ATTEMPTS,
        best: best_margin,
    })
}

fn sample_table(rng: &mut ChaCha8Rng, nx: usize, ny: usize, r_max: f64) -> RewardTable {
    RewardTable::new(
        (0..nx)
            .map(|_| (0..ny).map(|_| rng.gen_range(-r_max..r_max)).collect())
            .collect(),
    )
}

fn sample_dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let dir = Dirichlet::new(&vec![1.0; n]).expect("valid symmetric Dirichlet");
    dir.sample(rng)
}

/// Pin entries below `floor` to the floor and distribute the remaining mass
/// proportionally over the rest, growing the pinned set until stable.
///
/// Requires `n * floor < 1`; terminates in at most `n` rounds because the
/// pinned set only grows.
fn floor_and_renormalize(row: &[f64], floor: f64) -> Vec<f64> {
    let n = row.len();
    let mut pinned = vec![false; n];
    loop {
        let free_mass: f64 = 1.0 - pinned.iter().filter(|&&p| p).count() as f64 * floor;
        let free_sum: f64 = row
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(&v, _)| v)
            .sum();
        let mut changed = false;
        let mut out = vec![0.0; n];
        for i in 0..n {
            if pinned[i] {
                out[i] = floor;
            } else {
                let scaled = row[i] * free_mass / free_sum;
                if scaled < floor {
                    pinned[i] = true;
                    changed = true;
                } else {
                    out[i] = scaled;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Range of `E_{x~D, y~pi}[T]` over all policies: attained by per-prompt
/// minimizing / maximizing responses.
fn achievable_band(prompt_dist: &[f64], table: &RewardTable) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (x, row) in table.values.iter().enumerate() {
        let row_min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let row_max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo += prompt_dist[x] * row_min;
        hi += prompt_dist[x] * row_max;
    }
    (lo, hi)
}

fn declared_bound(soft: &[(RewardTable, f64)], hard: &[HardConstraint]) -> f64 {
    let mut bound = 0.0_f64;
    for (t, _) in soft {
        bound = bound.max(t.max_abs());
    }
    for hc in hard {
        bound = bound.max(hc.reward.max_abs());
        bound = bound.max(hc.shifted.max_abs());
    }
    bound
}

/// Save `spec` to `path` as a single JSON document.
pub fn save(spec: &ProblemSpec, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, spec)?;
    use std::io::Write;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Load a spec from `path`, erroring on schema mismatch or invalid content.
///
/// Schema errors name the offending field (e.g. a file missing `beta` fails
/// with a message containing `beta`); a parsed document that violates the
/// structural invariants fails validation with the full violation list.
pub fn load(path: &Path) -> Result<ProblemSpec> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let spec: ProblemSpec = serde_json::from_reader(reader)?;
    let report = validate(&spec);
    if !report.is_valid() {
        return Err(OpdError::InvalidSpec(report.to_message()));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_instance_is_valid() {
        let report = validate(&toy_instance());
        assert!(report.is_valid(), "violations: {:?}", report.violations);
    }

    #[test]
    fn toy_instance_matches_the_documented_constants() {
        let spec = toy_instance();
        // Soft objective rewards the first response only.
        assert_eq!(spec.soft_rewards[0].0.get(0, 0), 1.0);
        assert_eq!(spec.soft_rewards[0].0.get(0, 1), 0.0);
        assert_eq!(spec.soft_rewards[0].1, 1.0);
        // Hard constraint penalizes the first response.
        assert_eq!(spec.hard_rewards[0].reward.get(0, 0), -0.7);
        assert_eq!(spec.hard_rewards[0].reward.get(0, 1), 0.3);
        assert_eq!(spec.hard_rewards[0].threshold, 0.0);
        // Zero threshold: shifted equals raw.
        assert_eq!(spec.hard_rewards[0].shifted.get(0, 0), -0.7);
        // KL coefficient and reference policy.
        assert_eq!(spec.beta, 0.05);
        assert_eq!(spec.ref_policy.probs[0][0], 0.3);
        assert_eq!(spec.r_max, 1.0);
        assert_eq!(spec.p_min, 0.3);
    }

    #[test]
    fn validate_names_bad_prompt_dist_sum() {
        let mut spec = toy_instance();
        spec.num_prompts = 2;
        spec.prompt_dist = vec![0.6, 0.6];
        spec.ref_policy = TabularPolicy::new(vec![vec![0.3, 0.7], vec![0.3, 0.7]]);
        spec.soft_rewards = vec![(RewardTable::zeros(2, 2), 1.0)];
        spec.hard_rewards = vec![HardConstraint::new(RewardTable::zeros(2, 2), 0.0)];
        let report = validate(&spec);
        assert!(
            report
                .violations
                .iter()
                .any(|m| m.contains("prompt_dist sums to 1.2")),
            "got: {:?}",
            report.violations
        );
    }

    #[test]
    fn validate_names_full_support_violation() {
        let mut spec = toy_instance();
        spec.ref_policy = TabularPolicy::new(vec![vec![0.0, 1.0]]);
        let report = validate(&spec);
        assert!(
            report
                .violations
                .iter()
                .any(|m| m.contains("full-support") && m.contains("ref_policy[0][0]")),
            "got: {:?}",
            report.violations
        );
    }

    #[test]
    fn validate_rejects_nonpositive_beta() {
        let mut spec = toy_instance();
        spec.beta = -0.1;
        assert!(validate(&spec)
            .violations
            .iter()
            .any(|m| m.contains("beta")));
    }

    #[test]
    fn validate_rejects_reward_above_declared_bound() {
        let mut spec = toy_instance();
        spec.r_max = 0.5;
        let report = validate(&spec);
        assert!(report
            .violations
            .iter()
            .any(|m| m.contains("exceeds the declared bound")));
    }

    #[test]
    fn hard_constraint_shift_reconstructs() {
        let hc = HardConstraint::new(RewardTable::new(vec![vec![0.5, -0.25]]), 0.1);
        assert_eq!(hc.shifted.get(0, 0), 0.4);
        assert_eq!(hc.shifted.get(0, 1), -0.35);
    }

    #[test]
    fn random_instance_is_deterministic() {
        let a = random_instance(11, (3, 4, 2, 2), 1.0, 0.05).unwrap();
        let b = random_instance(11, (3, 4, 2, 2), 1.0, 0.05).unwrap();
        // Byte-identical serialization, not just approximate equality.
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn random_instance_reaches_slater_target() {
        let spec = random_instance(1, (3, 4, 1, 1), 1.0, 0.05).unwrap();
        let (xi, _) = crate::lagrangian::slater_margin(&spec);
        assert!(xi >= 0.05, "margin {xi} below target");
    }

    #[test]
    fn random_instance_respects_probability_floor() {
        let spec = random_instance(2, (2, 2, 1, 1), 1.0, 0.1).unwrap();
        assert!(spec.ref_policy.min_entry() >= 0.1);
    }

    #[test]
    fn random_instances_validate_across_seeds() {
        for seed in 0..20 {
            let spec = random_instance(seed, (4, 5, 2, 2), 1.0, 0.05).unwrap();
            let report = validate(&spec);
            assert!(
                report.is_valid(),
                "seed {seed} violations: {:?}",
                report.violations
            );
        }
    }

    #[test]
    fn floor_and_renormalize_is_exact() {
        // Second entry must be pinned; the rest rescaled proportionally.
        let out = floor_and_renormalize(&[0.5, 0.01, 0.49], 0.1);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|&p| p >= 0.1 - 1e-15));
        assert_eq!(out[1], 0.1);
        // Unpinned entries keep their ratio.
        assert!((out[0] / out[2] - 0.5 / 0.49).abs() < 1e-12);
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let spec = random_instance(5, (3, 3, 2, 1), 1.0, 0.05).unwrap();
        save(&spec, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(spec, loaded);
    }

    #[test]
    fn load_names_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        // Serialize, then strip the `beta` field.
        let mut value = serde_json::to_value(toy_instance()).unwrap();
        value.as_object_mut().unwrap().remove("beta");
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("beta"), "got: {err}");
    }

    #[test]
    fn load_rejects_negative_beta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("negbeta.json");
        let mut spec = toy_instance();
        spec.beta = -1.0;
        let file = std::fs::File::create(&path).unwrap();
        serde_json::to_writer(file, &spec).unwrap();
        let err = load(&path).unwrap_err();
        match err {
            OpdError::InvalidSpec(msg) => assert!(msg.contains("beta")),
            other => panic!("expected validation error, got {other}"),
        }
    }
}
