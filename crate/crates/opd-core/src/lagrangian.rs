//! Lagrangian evaluation: aggregated rewards, KL terms, constraint values,
//! the closed-form KL-regularized primal argmax, the one-shot dual
//! function, and the feasibility (Slater) margin.
//!
//! The Lagrangian of the constrained alignment problem is
//!
//! ```text
//! L(pi, lambda) = E[ S_lambda ] - beta * E_x[ KL(pi || pi_ref) ],
//! S_lambda(x,y) = sum_k w_k R_k(x,y) + sum_j lambda_j (R_j(x,y) - b_j),
//! ```
//!
//! with expectations over `x ~ D, y ~ pi(.|x)`. Its primal maximizer is an
//! exponential tilt of the reference policy, and more generally the
//! KL-proximal maximizer against an anchor policy has the same closed form
//! with mixed exponents — see [`proximal_argmax`].
//!
//! All softmax and normalizer arithmetic is done in log-space with per-row
//! max subtraction: realistic coefficients exponentiate scores on the order
//! of `S/beta = 20`, which is harmless for the log-sum-exp path and fatal
//! for naive exponentiation at smaller `beta`.
//!
//! Support conventions: `0 * ln 0 = 0`; support checks are exact (a
//! probability counts as zero only when it equals 0.0), since tabular
//! policies are constructed rather than estimated.
//!
//! All operations are pure and safe to call concurrently on shared inputs.

use serde::{Deserialize, Serialize};

use crate::error::{OpdError, Result};
use crate::problem::{ProblemSpec, RewardTable, TabularPolicy};
use crate::util;

/// Iteration budget for the multi-constraint feasibility-margin ascent.
const SLATER_ITERS: usize = 5000;

/// Nonnegative Lagrange multipliers, one per hard constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVector {
    /// `lambdas[j] >= 0` multiplies the `j`-th shifted constraint reward.
    pub lambdas: Vec<f64>,
}

impl DualVector {
    /// Multipliers from a vector; callers guarantee nonnegativity.
    pub fn new(lambdas: Vec<f64>) -> Self {
        DualVector { lambdas }
    }

    /// The zero multiplier of length `m`.
    pub fn zeros(m: usize) -> Self {
        DualVector {
            lambdas: vec![0.0; m],
        }
    }

    /// Number of multipliers.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    /// True iff there are no multipliers.
    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Entrywise projection onto the nonnegative orthant.
    pub fn clamp_nonnegative(&mut self) {
        for l in &mut self.lambdas {
            if *l < 0.0 {
                *l = 0.0;
            }
        }
    }

    /// Euclidean distance to `other`, squared.
    pub fn distance_sq(&self, other: &DualVector) -> f64 {
        util::l2_distance_sq(&self.lambdas, &other.lambdas)
    }

    /// Sum of absolute entries.
    pub fn l1_norm(&self) -> f64 {
        self.lambdas.iter().map(|l| l.abs()).sum()
    }
}

/// Full evaluation of the Lagrangian at one primal-dual pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagrangianReport {
    /// `L(pi, lambda) = E[S_lambda] - beta * E_x[KL(pi || pi_ref)]`.
    pub value: f64,
    /// Expected shifted constraint rewards `E[R_j - b_j]`, one per
    /// constraint; this vector is also the dual gradient.
    pub constraint_values: Vec<f64>,
    /// Expected KL to the reference policy, `E_x[KL(pi || pi_ref)]`.
    pub kl_to_ref: f64,
    /// Expected weighted soft reward `E[sum_k w_k R_k]` (the unconstrained
    /// objective without the KL penalty).
    pub soft_value: f64,
}

/// `KL(p || q) = sum_i p_i ln(p_i / q_i)`, with `0 * ln 0 = 0`.
///
/// # Errors
///
/// [`OpdError::SupportViolation`] when some `p_i > 0` has `q_i = 0`, and
/// [`OpdError::DimensionMismatch`] on length mismatch.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(OpdError::DimensionMismatch(format!(
            "kl_divergence: p has length {}, q has length {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(OpdError::SupportViolation(format!(
                "kl_divergence: p[{i}] = {pi} > 0 but q[{i}] = 0"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Prompt-averaged KL between two policies: `sum_x D(x) KL(p_x || q_x)`.
pub fn expected_kl(spec: &ProblemSpec, p: &TabularPolicy, q: &TabularPolicy) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..spec.num_prompts {
        total += spec.prompt_dist[x] * kl_divergence(p.row(x), q.row(x))?;
    }
    Ok(total)
}

/// Expected table value under `x ~ D, y ~ policy`: the basic bilinear form
/// every Lagrangian quantity reduces to.
pub fn expected_reward(spec: &ProblemSpec, policy: &TabularPolicy, table: &RewardTable) -> f64 {
    let mut total = 0.0;
    for x in 0..spec.num_prompts {
        let row = policy.row(x);
        let vals = &table.values[x];
        let mut inner = 0.0;
        for y in 0..spec.num_responses {
            inner += row[y] * vals[y];
        }
        total += spec.prompt_dist[x] * inner;
    }
    total
}

/// The aggregated reward `S_lambda(x,y) = sum_k w_k R_k + sum_j lambda_j (R_j - b_j)`.
///
/// # Errors
///
/// [`OpdError::DimensionMismatch`] when `lambda` does not have one entry
/// per hard constraint.
pub fn aggregated_reward(spec: &ProblemSpec, lambda: &DualVector) -> Result<RewardTable> {
    if lambda.len() != spec.num_constraints() {
        return Err(OpdError::DimensionMismatch(format!(
            "aggregated_reward: lambda has length {}, spec has {} hard constraints",
            lambda.len(),
            spec.num_constraints()
        )));
    }
    let mut table = RewardTable::zeros(spec.num_prompts, spec.num_responses);
    for x in 0..spec.num_prompts {
        for y in 0..spec.num_responses {
            let mut s = 0.0;
            for (rk, wk) in &spec.soft_rewards {
                s += wk * rk.get(x, y);
            }
            for (j, hc) in spec.hard_rewards.iter().enumerate() {
                s += lambda.lambdas[j] * hc.shifted.get(x, y);
            }
            table.values[x][y] = s;
        }
    }
    Ok(table)
}

/// Evaluate the Lagrangian and its components at `(policy, lambda)`.
///
/// `value` is computed as `E[S_lambda] - beta * kl_to_ref` through the
/// aggregated table, while `soft_value` and `constraint_values` are
/// computed from the individual tables, so the decomposition
/// `value = soft_value + lambda . constraint_values - beta * kl_to_ref`
/// is a genuine cross-check of two computation paths (it holds to 1e-10).
///
/// # Errors
///
/// [`OpdError::DimensionMismatch`] on a wrong-length `lambda`;
/// [`OpdError::SupportViolation`] if the policy puts mass where the
/// reference policy has none (impossible for validated instances, whose
/// reference policies have full support).
pub fn lagrangian_report(
    spec: &ProblemSpec,
    policy: &TabularPolicy,
    lambda: &DualVector,
) -> Result<LagrangianReport> {
    let aggregated = aggregated_reward(spec, lambda)?;
    let kl_to_ref = expected_kl(spec, policy, &spec.ref_policy)?;
    let value = expected_reward(spec, policy, &aggregated) - spec.beta * kl_to_ref;

    let mut soft_value = 0.0;
    for (rk, wk) in &spec.soft_rewards {
        soft_value += wk * expected_reward(spec, policy, rk);
    }
    let constraint_values: Vec<f64> = spec
        .hard_rewards
        .iter()
        .map(|hc| expected_reward(spec, policy, &hc.shifted))
        .collect();

    Ok(LagrangianReport {
        value,
        constraint_values,
        kl_to_ref,
        soft_value,
    })
}

/// Closed-form KL-proximal maximizer of the Lagrangian against `anchor`:
///
/// ```text
/// pi+(y|x) ∝ anchor(y|x)^{eta/(eta+beta)} * pi_ref(y|x)^{beta/(eta+beta)}
///            * exp( S_lambda(x,y) / (eta+beta) )
/// ```
///
/// maximizes `L(pi, lambda) - eta * E_x[KL(pi || anchor)]`. At `eta = 0`
/// the anchor drops out and the result is the exact primal argmax
/// `pi* ∝ pi_ref * exp(S_lambda / beta)`. Rows are renormalized; all
/// arithmetic is log-space with per-row max subtraction.
///
/// # Errors
///
/// [`OpdError::SupportViolation`] if the anchor is zero somewhere the
/// reference policy is positive; [`OpdError::DimensionMismatch`] on shape
/// mismatch; [`OpdError::InvalidArgument`] for negative `eta`.
pub fn proximal_argmax(
    spec: &ProblemSpec,
    lambda: &DualVector,
    anchor: &TabularPolicy,
    eta: f64,
) -> Result<TabularPolicy> {
    if eta < 0.0 || !eta.is_finite() {
        return Err(OpdError::InvalidArgument(format!(
            "proximal_argmax: eta = {eta} must be a finite nonnegative real"
        )));
    }
    if anchor.num_prompts() != spec.num_prompts || anchor.num_responses() != spec.num_responses {
        return Err(OpdError::DimensionMismatch(format!(
            "proximal_argmax: anchor is {}x{}, spec is {}x{}",
            anchor.num_prompts(),
            anchor.num_responses(),
            spec.num_prompts,
            spec.num_responses
        )));
    }
    for x in 0..spec.num_prompts {
        for y in 0..spec.num_responses {
            if spec.ref_policy.probs[x][y] > 0.0 && anchor.probs[x][y] == 0.0 {
                return Err(OpdError::SupportViolation(format!(
                    "proximal_argmax: anchor[{x}][{y}] = 0 where ref_policy[{x}][{y}] = {} > 0",
                    spec.ref_policy.probs[x][y]
                )));
            }
        }
    }

    let aggregated = aggregated_reward(spec, lambda)?;
    let denom = eta + spec.beta;
    let anchor_weight = eta / denom;
    let ref_weight = spec.beta / denom;

    let mut rows = Vec::with_capacity(spec.num_prompts);
    for x in 0..spec.num_prompts {
        let mut logits = vec![0.0; spec.num_responses];
        for y in 0..spec.num_responses {
            // At eta = 0 the anchor exponent is exactly zero; skip the log so a
            // zero anchor entry contributes 1 rather than 0 * (-inf) = NaN.
            let anchor_term = if anchor_weight > 0.0 {
                anchor_weight * anchor.probs[x][y].ln()
            } else {
                0.0
            };
            logits[y] = anchor_term
                + ref_weight * spec.ref_policy.probs[x][y].ln()
                + aggregated.get(x, y) / denom;
        }
        let lse = util::log_sum_exp(&logits);
        let row: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
        rows.push(row);
    }
    let mut policy = TabularPolicy::new(rows);
    // Remove the residual rounding in exp(logit - lse) so rows are
    // row-stochastic to full precision.
    for row in &mut policy.probs {
        util::normalize_in_place(row);
    }
    Ok(policy)
}

/// The one-shot dual function `d(lambda) = max_pi L(pi, lambda)` and its
/// gradient.
///
/// Eliminating the primal variable in closed form gives
/// `d(lambda) = E_x[ beta * ln Z(x) ]` with
/// `Z(x) = sum_y pi_ref(y|x) exp(S_lambda(x,y)/beta)`, and the gradient is
/// the expected shifted constraint reward under the maximizing policy. The
/// value is convex in `lambda`.
///
/// # Errors
///
/// [`OpdError::DimensionMismatch`] on a wrong-length `lambda`.
pub fn dual_function(spec: &ProblemSpec, lambda: &DualVector) -> Result<(f64, Vec<f64>)> {
    let aggregated = aggregated_reward(spec, lambda)?;
    let mut value = 0.0;
    for x in 0..spec.num_prompts {
        let logits: Vec<f64> = (0..spec.num_responses)
            .map(|y| spec.ref_policy.probs[x][y].ln() + aggregated.get(x, y) / spec.beta)
            .collect();
        value += spec.prompt_dist[x] * spec.beta * util::log_sum_exp(&logits);
    }
    let maximizer = proximal_argmax(spec, lambda, &spec.ref_policy, 0.0)?;
    let gradient: Vec<f64> = spec
        .hard_rewards
        .iter()
        .map(|hc| expected_reward(spec, &maximizer, &hc.shifted))
        .collect();
    Ok((value, gradient))
}

/// The feasibility margin `xi = max_pi min_j E[R_j - b_j]` and a witness
/// policy attaining it.
///
/// With one constraint the maximum is exact: the deterministic policy that
/// picks the per-prompt argmax of the shifted table. With several
/// constraints the concave max-min program is solved by projected
/// supergradient ascent on the product of simplices (5000 iterations, step
/// `1/sqrt(t)`, best iterate kept); exactness is not required because the
/// margin only parameterizes bounds, and an underestimate only loosens
/// them.
///
/// A negative margin signals an infeasible instance (no strictly feasible
/// policy exists). An instance without hard constraints is vacuously
/// feasible and reports an infinite margin.
pub fn slater_margin(spec: &ProblemSpec) -> (f64, TabularPolicy) {
    let m = spec.num_constraints();
    if m == 0 {
        return (
            f64::INFINITY,
            TabularPolicy::uniform(spec.num_prompts, spec.num_responses),
        );
    }
    if m == 1 {
        let shifted = &spec.hard_rewards[0].shifted;
        let mut rows = Vec::with_capacity(spec.num_prompts);
        let mut xi = 0.0;
        for x in 0..spec.num_prompts {
            let row = &shifted.values[x];
            let (best_y, best_v) = row
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(by, bv), (y, v)| {
                    if v > bv {
                        (y, v)
                    } else {
                        (by, bv)
                    }
                });
            let mut prow = vec![0.0; spec.num_responses];
            prow[best_y] = 1.0;
            rows.push(prow);
            xi += spec.prompt_dist[x] * best_v;
        }
        return (xi, TabularPolicy::new(rows));
    }

    let min_constraint = |policy: &TabularPolicy| -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (j, hc) in spec.hard_rewards.iter().enumerate() {
            let v = expected_reward(spec, policy, &hc.shifted);
            if v < best.0 {
                best = (v, j);
            }
        }
        best
    };

    let mut policy = TabularPolicy::uniform(spec.num_prompts, spec.num_responses);
    let (mut best_xi, _) = min_constraint(&policy);
    let mut best_policy = policy.clone();

    for t in 1..=SLATER_ITERS {
        let (_, j_active) = min_constraint(&policy);
        let step = 1.0 / (t as f64).sqrt();
        let grad_table = &spec.hard_rewards[j_active].shifted;
        for x in 0..spec.num_prompts {
            let scale = step * spec.prompt_dist[x];
            let lifted: Vec<f64> = policy.probs[x]
                .iter()
                .zip(&grad_table.values[x])
                .map(|(&p, &g)| p + scale * g)
                .collect();
            policy.probs[x] = util::project_to_simplex(&lifted);
        }
        let (xi, _) = min_constraint(&policy);
        if xi > best_xi {
            best_xi = xi;
            best_policy = policy.clone();
        }
    }
    (best_xi, best_policy)
}
