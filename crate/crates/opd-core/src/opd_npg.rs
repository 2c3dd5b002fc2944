//! Parameter-space optimistic loop: natural-policy-gradient updates on
//! tabular softmax logits.
//!
//! This module re-implements the four-phase optimistic iteration of
//! [`crate::opd_dist`] with the policy carried as mean-centered logits
//! rather than as explicit distributions. The primal move comes in two
//! interchangeable forms:
//!
//! - **pseudoinverse** — the literal natural-gradient step: per prompt,
//!   solve `F_x w = grad_x` for the least-norm `w` through a symmetric
//!   eigendecomposition of the Fisher block `F_x`, then move
//!   `theta += w / (eta_theta + beta)`;
//! - **advantage** — the closed form the pseudoinverse solve reduces to:
//!   the advantage function is itself a solution of the Fisher system
//!   (its policy-weighted mean is zero, so the rank-deficient system is
//!   consistent), so `theta += A / (eta_theta + beta)` gives the same
//!   induced policy.
//!
//! Both forms induce exactly the distributional proximal update
//! `pi+ ∝ pi^{eta/(eta+beta)} ref^{beta/(eta+beta)} exp(S/(eta+beta))`,
//! so a parameter-space run and a distribution-space run with the same
//! configuration generate the same policy sequence (to rounding). The one
//! caveat is a prompt with zero sampling mass: its gradient and Fisher
//! block both vanish, so the pseudoinverse step leaves it unchanged while
//! the advantage step (in which the prompt weight cancels) still moves it;
//! only the advantage path tracks the distributional update there.
//!
//! The dual update is shared with [`crate::opd_dist`]; the default
//! convention differs (scale 1.0 here, the explicit-rule form, versus 0.5
//! there), and the equivalence tests pin the scales equal.
//!
//! Softmax logits are stored per-row mean-centered — the canonical
//! representative of the softmax gauge, under which adding a per-prompt
//! constant changes nothing. An optional projection clamp keeps logits in
//! a box (implemented as clamp-then-recenter; a practical safeguard, not
//! an exact Euclidean projection).
//!
//! An optional per-step perturbation models inexact updates: each primal
//! step's logits are shifted by seeded, row-centered uniform noise scaled
//! to a requested l1 budget. The run report measures an empirical proxy
//! for the log-policy Lipschitz constant (largest observed ratio of
//! log-policy change to parameter l1 change) and evaluates the
//! approximation-gap neighborhood bound `2 * gap / (1 - rho)` with it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpdError, Result};
use crate::lagrangian::{self, DualVector};
use crate::opd_dist::{self, ConvergenceTrace, OPDConfig, OPDState, TraceRecord};
use crate::oracle::{self, SaddleSolution};
use crate::problem::{ProblemSpec, TabularPolicy};
use crate::theory;
use crate::util;

/// Smallest per-row policy probability the natural-gradient machinery
/// accepts. Below this, the Fisher block's genuine eigendirections fall
/// under the relative rank cutoff and become indistinguishable from the
/// softmax gauge kernel, so the step is refused instead of silently
/// dropping directions.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Relative eigenvalue cutoff for the Fisher pseudoinverse: directions
/// with eigenvalues below `RANK_CUTOFF * lambda_max(F_x)` are treated as
/// the gauge kernel and discarded.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Tabular softmax parameters: one logit row per prompt, stored per-row
/// mean-centered (the canonical gauge representative). The induced policy
/// is the row-wise softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    /// Mean-centered logits, `num_prompts` rows of `num_responses`.
    pub logits: Vec<Vec<f64>>,
}

impl SoftmaxParams {
    /// Wrap raw logits, centering each row (subtracting its mean) so the
    /// stored representative is canonical.
    pub fn new(mut logits: Vec<Vec<f64>>) -> Self {
        for row in &mut logits {
            center_row(row);
        }
        SoftmaxParams { logits }
    }

    /// Logits reproducing `policy` exactly: `ln p`, centered.
    ///
    /// # Errors
    ///
    /// [`OpdError::SupportViolation`] if any probability is zero — no
    /// finite logit represents it.
    pub fn from_policy(policy: &TabularPolicy) -> Result<Self> {
        let mut logits = Vec::with_capacity(policy.num_prompts());
        for (x, row) in policy.probs.iter().enumerate() {
            let mut lrow = Vec::with_capacity(row.len());
            for (y, &p) in row.iter().enumerate() {
                if p <= 0.0 {
                    return Err(OpdError::SupportViolation(format!(
                        "from_policy: probability at ({x},{y}) is {p}; zero-mass \
                         responses have no finite logit"
                    )));
                }
                lrow.push(p.ln());
            }
            logits.push(lrow);
        }
        Ok(SoftmaxParams::new(logits))
    }

    /// The induced policy: row-wise softmax of the logits.
    pub fn policy(&self) -> TabularPolicy {
        let probs = self
            .logits
            .iter()
            .map(|row| {
                let lse = util::log_sum_exp(row);
                row.iter().map(|&t| (t - lse).exp()).collect()
            })
            .collect();
        TabularPolicy::new(probs)
    }

    /// Number of prompts (logit rows).
    pub fn num_prompts(&self) -> usize {
        self.logits.len()
    }

    /// Number of responses (row width).
    pub fn num_responses(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }
}

fn center_row(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    for v in row.iter_mut() {
        *v -= mean;
    }
}

/// One prompt's Fisher information block
/// `D(x) * (diag(pi_x) - pi_x pi_x^T)`: symmetric, positive semidefinite,
/// rows summing to zero (the all-ones vector spans its gauge kernel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherBlock {
    /// The `num_responses x num_responses` matrix.
    pub matrix: Vec<Vec<f64>>,
}

/// The advantage table `A(x,y) = S_lambda(x,y) - beta ln(pi/ref) - V(x)`,
/// where `V(x)` is the policy average of the first two terms, so every
/// row's policy-weighted mean is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantage {
    /// One row per prompt.
    pub values: Vec<Vec<f64>>,
}

/// Fisher blocks of the induced policy, one per prompt; symmetry is exact
/// by construction (entry `(i,j)` and `(j,i)` are computed by the same
/// expression).
pub fn fisher(spec: &ProblemSpec, theta: &SoftmaxParams) -> Vec<FisherBlock> {
    let policy = theta.policy();
    (0..spec.num_prompts)
        .map(|x| {
            let d = spec.prompt_dist[x];
            let row = policy.row(x);
            let matrix = (0..spec.num_responses)
                .map(|i| {
                    (0..spec.num_responses)
                        .map(|j| {
                            let diag = if i == j { row[i] } else { 0.0 };
                            d * (diag - row[i] * row[j])
                        })
                        .collect()
                })
                .collect();
            FisherBlock { matrix }
        })
        .collect()
}

/// The advantage table of `theta` against the aggregated score at
/// `lambda`.
///
/// # Errors
///
/// [`OpdError::DimensionMismatch`] on a wrong-length `lambda`.
pub fn advantage(
    spec: &ProblemSpec,
    theta: &SoftmaxParams,
    lambda: &DualVector,
) -> Result<Advantage> {
    let scores = lagrangian::aggregated_reward(spec, lambda)?;
    let mut values = Vec::with_capacity(spec.num_prompts);
    for x in 0..spec.num_prompts {
        let row = &theta.logits[x];
        let lse = util::log_sum_exp(row);
        // q_y = S(x,y) - beta * ln(pi(y|x) / ref(y|x)), with
        // ln pi = theta - lse computed in log space.
        let q: Vec<f64> = (0..spec.num_responses)
            .map(|y| {
                let log_pi = row[y] - lse;
                scores.get(x, y) - spec.beta * (log_pi - spec.ref_policy.probs[x][y].ln())
            })
            .collect();
        let v: f64 = (0..spec.num_responses)
            .map(|y| (row[y] - lse).exp() * q[y])
            .sum();
        values.push(q.into_iter().map(|qy| qy - v).collect());
    }
    Ok(Advantage { values })
}

/// The exact gradient of the Lagrangian in ambient logit space:
/// entry `(x,y)` is `D(x) * pi_theta(y|x) * A(x,y)`.
///
/// # Errors
///
/// [`OpdError::DimensionMismatch`] on a wrong-length `lambda`.
pub fn policy_gradient(
    spec: &ProblemSpec,
    theta: &SoftmaxParams,
    lambda: &DualVector,
) -> Result<Vec<Vec<f64>>> {
    let adv = advantage(spec, theta, lambda)?;
    let policy = theta.policy();
    Ok((0..spec.num_prompts)
        .map(|x| {
            let d = spec.prompt_dist[x];
            (0..spec.num_responses)
                .map(|y| d * policy.probs[x][y] * adv.values[x][y])
                .collect()
        })
        .collect())
}

/// Which implementation the primal step uses; both induce the same policy
/// update (see the module docs for the zero-mass-prompt caveat).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimalPath {
    /// Least-norm solve of the Fisher system via eigendecomposition.
    Pseudoinverse,
    /// Closed-form advantage step.
    Advantage,
}

/// One natural-gradient primal step from `theta` at multipliers `lambda`.
///
/// Pseudoinverse path: per prompt, eigendecompose the Fisher block,
/// discard eigenvalues below [`RANK_CUTOFF`] times the largest, and take
/// the least-norm solution `w` of `F_x w = grad_x`; then
/// `theta+ = center(theta + w / (eta_theta + beta))`. Advantage path:
/// `theta+ = center(theta + A / (eta_theta + beta))`.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] for a nonpositive `eta_theta`;
/// [`OpdError::DegenerateFisher`] when some induced policy row has an
/// entry below [`SUPPORT_FLOOR`]; [`OpdError::DimensionMismatch`]
/// propagated from the advantage evaluation.
pub fn npg_primal_step(
    spec: &ProblemSpec,
    theta: &SoftmaxParams,
    lambda: &DualVector,
    eta_theta: f64,
    path: PrimalPath,
) -> Result<SoftmaxParams> {
    if !(eta_theta > 0.0 && eta_theta.is_finite()) {
        return Err(OpdError::InvalidArgument(format!(
            "npg_primal_step: eta_theta = {eta_theta} must be a positive real"
        )));
    }
    let policy = theta.policy();
    for x in 0..spec.num_prompts {
        let min_prob = policy.row(x).iter().cloned().fold(f64::INFINITY, f64::min);
        if min_prob < SUPPORT_FLOOR {
            return Err(OpdError::DegenerateFisher {
                prompt: x,
                min_prob,
                floor: SUPPORT_FLOOR,
            });
        }
    }
    let step = 1.0 / (eta_theta + spec.beta);
    let direction: Vec<Vec<f64>> = match path {
        PrimalPath::Advantage => advantage(spec, theta, lambda)?.values,
        PrimalPath::Pseudoinverse => {
            let grad = policy_gradient(spec, theta, lambda)?;
            let blocks = fisher(spec, theta);
            blocks
                .iter()
                .zip(&grad)
                .map(|(block, g)| least_norm_solve(&block.matrix, g))
                .collect()
        }
    };
    let logits = theta
        .logits
        .iter()
        .zip(&direction)
        .map(|(row, dir)| row.iter().zip(dir).map(|(&t, &d)| t + step * d).collect())
        .collect();
    Ok(SoftmaxParams::new(logits))
}

/// Eigendecomposition of a small symmetric matrix by the cyclic Jacobi
/// method: `(eigenvalues, eigenvectors)` with eigenvector `k` stored as
/// `vectors[..][k]` (columns).
///
/// Jacobi instead of a QR-based routine because the blocks here are
/// nearly singular with clustered tiny eigenvalues once the policy
/// concentrates, and QR implementations can mix up labels inside such a
/// cluster — returning the gauge direction with an O(pi_min) eigenvalue
/// and a genuine O(pi_min) direction with a zero one, which makes a
/// rank-cutoff solve silently delete a real solution component. Jacobi
/// computes the tiny eigenvalues of these blocks to high relative
/// accuracy, keeping the cutoff decision trustworthy.
fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, &x| acc.max(x.abs()));
    if scale > 0.0 {
        for _sweep in 0..60 {
            let mut off = 0.0_f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[p][q].abs());
                }
            }
            if off <= f64::EPSILON * scale {
                break;
            }
            for p in 0..(n - 1) {
                for q in (p + 1)..n {
                    let apq = a[p][q];
                    if apq.abs() <= f64::EPSILON * f64::EPSILON * scale {
                        continue;
                    }
                    let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        1.0 / (tau - (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let vkp = row[p];
                        let vkq = row[q];
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let values = (0..n).map(|k| a[k][k]).collect();
    (values, v)
}

/// Least-norm solution of the symmetric PSD system `m w = g` through an
/// eigendecomposition with relative cutoff [`RANK_CUTOFF`]. A zero matrix
/// (zero-mass prompt) yields the zero solution.
fn least_norm_solve(m: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (values, vectors) = jacobi_eigen(m);
    let max_eig = values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_CUTOFF * max_eig;
    let apply_pinv = |rhs: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; n];
        for (k, &e) in values.iter().enumerate() {
            if e <= cutoff {
                continue;
            }
            let coeff: f64 = (0..n).map(|i| vectors[i][k] * rhs[i]).sum::<f64>() / e;
            for i in 0..n {
                w[i] += coeff * vectors[i][k];
            }
        }
        w
    };
    let mut w = apply_pinv(g);
    // Iterative refinement: a concentrated policy drives the block's
    // condition number toward 1/RANK_CUTOFF, where a single solve keeps
    // only ~5 accurate digits. The right-hand side is consistent (it
    // sums to zero along the kernel), so each pass against the exact
    // residual multiplies the error by the solve's relative accuracy;
    // two passes restore full precision.
    for _ in 0..2 {
        let residual: Vec<f64> = (0..n)
            .map(|i| g[i] - (0..n).map(|j| m[i][j] * w[j]).sum::<f64>())
            .collect();
        let correction = apply_pinv(&residual);
        for i in 0..n {
            w[i] += correction[i];
        }
    }
    w
}

/// Configuration of a parameter-space run: the shared step/iteration
/// parameters plus the primal path and the optional projection clamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpgConfig {
    /// Stepsizes, dual convention, iteration count, multiplier ceiling.
    pub base: OPDConfig,
    /// Primal step implementation.
    pub path: PrimalPath,
    /// Optional logit box half-width `L`: after each primal step, logits
    /// are clamped to `[-L, L]` and re-centered. `None` disables the
    /// clamp (the default; useful only as a support-floor safeguard).
    pub logit_clamp: Option<f64>,
}

impl NpgConfig {
    /// Validate the base configuration and the clamp domain.
    ///
    /// # Errors
    ///
    /// [`OpdError::InvalidArgument`] listing every violated requirement.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if let Some(clamp) = self.logit_clamp {
            if !(clamp > 0.0 && clamp.is_finite()) {
                return Err(OpdError::InvalidArgument(format!(
                    "logit_clamp = {clamp} must be a positive real when set"
                )));
            }
        }
        Ok(())
    }
}

/// The analysis-backed default configuration: the same stepsizes and
/// multiplier ceiling as [`opd_dist::recommended_stepsizes`], the explicit
/// dual convention (scale 1.0) native to this loop, the advantage primal
/// path, and no clamp.
pub fn recommended_config(spec: &ProblemSpec) -> NpgConfig {
    let mut base = opd_dist::recommended_stepsizes(spec);
    base.dual_step_scale = 1.0;
    NpgConfig {
        base,
        path: PrimalPath::Advantage,
        logit_clamp: None,
    }
}

/// Per-step perturbation of the primal updates: every primal step's
/// logits are shifted by row-centered uniform noise rescaled to l1 norm
/// `epsilon` (exactly, up to rounding), drawn from a generator seeded
/// with `seed`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApproxNoise {
    /// The l1 budget per primal step; `0` disables the perturbation.
    pub epsilon: f64,
    /// Seed of the noise stream.
    pub seed: u64,
}

/// Draw one row-centered noise matrix with l1 norm `epsilon`.
pub(crate) fn sample_noise(
    rng: &mut ChaCha8Rng,
    num_prompts: usize,
    num_responses: usize,
    epsilon: f64,
) -> Vec<Vec<f64>> {
    let mut noise: Vec<Vec<f64>> = (0..num_prompts)
        .map(|_| (0..num_responses).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for row in &mut noise {
        center_row(row);
    }
    let l1: f64 = noise.iter().flatten().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        let scale = epsilon / l1;
        for row in &mut noise {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    noise
}

/// The full parameter-space iterate: actual (hat) pair plus the previous
/// predicted pair consumed by the next lookahead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpgState {
    /// Actual logit iterate.
    pub hat_theta: SoftmaxParams,
    /// Actual multiplier iterate.
    pub hat_lambda: DualVector,
    /// Previous predicted logits.
    pub pred_theta_prev: SoftmaxParams,
    /// Previous predicted multiplier.
    pub pred_lambda_prev: DualVector,
    /// Iteration counter.
    pub iter: usize,
}

impl NpgState {
    /// Canonical start: logits of the reference policy, zero multipliers,
    /// lags equal to the initial iterates.
    ///
    /// # Errors
    ///
    /// [`OpdError::SupportViolation`] if the reference policy has a zero
    /// entry (invalid for validated instances).
    pub fn init(spec: &ProblemSpec) -> Result<Self> {
        let theta = SoftmaxParams::from_policy(&spec.ref_policy)?;
        let m = spec.num_constraints();
        Ok(NpgState {
            hat_theta: theta.clone(),
            hat_lambda: DualVector::zeros(m),
            pred_theta_prev: theta,
            pred_lambda_prev: DualVector::zeros(m),
            iter: 0,
        })
    }
}

/// Apply the optional projection clamp (clamp to the box, re-center).
fn project(theta: SoftmaxParams, clamp: Option<f64>) -> SoftmaxParams {
    match clamp {
        None => theta,
        Some(l) => SoftmaxParams::new(
            theta
                .logits
                .into_iter()
                .map(|row| row.into_iter().map(|t| t.clamp(-l, l)).collect())
                .collect(),
        ),
    }
}

/// Add a noise matrix to already-centered logits (centered noise keeps
/// the representative canonical).
fn perturb(theta: &mut SoftmaxParams, noise: &[Vec<f64>]) {
    for (row, nrow) in theta.logits.iter_mut().zip(noise) {
        for (t, n) in row.iter_mut().zip(nrow) {
            *t += n;
        }
    }
}

/// Advance `state` by one full optimistic iteration (both primal steps
/// noise-free); the four updates mirror [`opd_dist::opd_step`] exactly.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] for an invalid `config`; otherwise
/// propagated from the primal steps.
pub fn npg_step(spec: &ProblemSpec, state: &NpgState, config: &NpgConfig) -> Result<NpgState> {
    npg_step_inner(spec, state, config, None, &mut 0.0)
}

fn npg_step_inner(
    spec: &ProblemSpec,
    state: &NpgState,
    config: &NpgConfig,
    mut noise: Option<(&ApproxNoise, &mut ChaCha8Rng)>,
    lipschitz_proxy: &mut f64,
) -> Result<NpgState> {
    config.validate()?;
    let mut primal = |anchor: &SoftmaxParams,
                      lambda: &DualVector,
                      noise: &mut Option<(&ApproxNoise, &mut ChaCha8Rng)>|
     -> Result<SoftmaxParams> {
        let stepped = npg_primal_step(spec, anchor, lambda, config.base.eta_theta, config.path)?;
        let mut next = project(stepped, config.logit_clamp);
        if let Some((approx, rng)) = noise {
            if approx.epsilon > 0.0 {
                let draw = sample_noise(rng, spec.num_prompts, spec.num_responses, approx.epsilon);
                perturb(&mut next, &draw);
            }
        }
        observe_lipschitz(anchor, &next, lipschitz_proxy);
        Ok(next)
    };
    // Predicted pair: evaluated at the previous prediction's gradients.
    let pred_theta = primal(&state.hat_theta, &state.pred_lambda_prev, &mut noise)?;
    let g_prev = opd_dist::constraint_values(spec, &state.pred_theta_prev.policy());
    let pred_lambda = opd_dist::dual_update(&state.hat_lambda, &g_prev, &config.base);
    // Actual pair: evaluated at the fresh prediction's gradients.
    let hat_theta = primal(&state.hat_theta, &pred_lambda, &mut noise)?;
    let g_pred = opd_dist::constraint_values(spec, &pred_theta.policy());
    let hat_lambda = opd_dist::dual_update(&state.hat_lambda, &g_pred, &config.base);
    Ok(NpgState {
        hat_theta,
        hat_lambda,
        pred_theta_prev: pred_theta,
        pred_lambda_prev: pred_lambda,
        iter: state.iter + 1,
    })
}

/// Update the running log-policy Lipschitz proxy with one observed primal
/// move: the ratio of the sup-norm log-policy change to the l1 parameter
/// change.
fn observe_lipschitz(before: &SoftmaxParams, after: &SoftmaxParams, proxy: &mut f64) {
    let pol_before = before.policy();
    let pol_after = after.policy();
    let mut dlog: f64 = 0.0;
    for (rb, ra) in pol_before.probs.iter().zip(&pol_after.probs) {
        for (&pb, &pa) in rb.iter().zip(ra) {
            if pb > 0.0 && pa > 0.0 {
                dlog = dlog.max((pa.ln() - pb.ln()).abs());
            }
        }
    }
    let dtheta: f64 = before
        .logits
        .iter()
        .flatten()
        .zip(after.logits.iter().flatten())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    if dtheta > 0.0 {
        *proxy = proxy.max(dlog / dtheta);
    }
}

/// Result of a parameter-space run: the per-iteration trace plus the
/// measured Lipschitz proxy and, for perturbed runs, the neighborhood
/// radius the approximation-gap bound certifies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpgRunReport {
    /// Per-iteration history (same shape as the distributional trace).
    pub trace: ConvergenceTrace,
    /// Largest observed ratio of sup-norm log-policy change to l1
    /// parameter change across all primal steps; an empirical stand-in
    /// for the log-policy continuity constant, reported for use in the
    /// gap bound.
    pub lipschitz_proxy: f64,
    /// `2 * gap / (1 - rho)` with the gap evaluated at the run's noise
    /// level and measured proxy; `None` for unperturbed runs.
    pub neighborhood: Option<f64>,
    /// The state after the final iteration.
    pub final_state: NpgState,
}

/// Run `config.base.max_iters` optimistic iterations from the canonical
/// start, optionally perturbing every primal step, recording one
/// [`TraceRecord`] per iteration. With an oracle solution the records
/// carry the last-iterate distance and the contraction potential (via the
/// induced distributional state).
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] for an invalid `config` or a negative or
/// non-finite noise level; otherwise propagated.
pub fn npg_run(
    spec: &ProblemSpec,
    config: &NpgConfig,
    oracle_solution: Option<&SaddleSolution>,
    noise: Option<&ApproxNoise>,
) -> Result<NpgRunReport> {
    config.validate()?;
    if let Some(approx) = noise {
        if !(approx.epsilon >= 0.0 && approx.epsilon.is_finite()) {
            return Err(OpdError::InvalidArgument(format!(
                "noise epsilon = {} must be a finite nonnegative real",
                approx.epsilon
            )));
        }
    }
    let mut rng = noise.map(|approx| util::rng_from_seed(approx.seed));
    let mut lipschitz_proxy = 0.0;
    let mut state = NpgState::init(spec)?;
    let mut records = Vec::with_capacity(config.base.max_iters);
    for _ in 0..config.base.max_iters {
        let step_noise = match (noise, rng.as_mut()) {
            (Some(approx), Some(r)) => Some((approx, r)),
            _ => None,
        };
        state = npg_step_inner(spec, &state, config, step_noise, &mut lipschitz_proxy)?;
        let hat_policy = state.hat_theta.policy();
        let report = lagrangian::lagrangian_report(spec, &hat_policy, &state.hat_lambda)?;
        let (distance, phi) = match oracle_solution {
            Some(solution) => {
                let dist_state = OPDState {
                    hat_policy: hat_policy.clone(),
                    hat_lambda: state.hat_lambda.clone(),
                    pred_policy_prev: state.pred_theta_prev.policy(),
                    pred_lambda_prev: state.pred_lambda_prev.clone(),
                    iter: state.iter,
                };
                (
                    Some(oracle::distance(spec, solution, &hat_policy, &state.hat_lambda)?),
                    Some(theory::phi(spec, &dist_state, solution)?),
                )
            }
            None => (None, None),
        };
        records.push(TraceRecord {
            iter: state.iter,
            distance,
            lagrangian_value: report.value,
            constraint_values: report.constraint_values,
            phi,
            hat_lambda: state.hat_lambda.lambdas.clone(),
            inner_steps: None,
        });
    }
    let neighborhood = noise.and_then(|approx| {
        if approx.epsilon > 0.0 {
            let gap = theory::gap_bound(
                approx.epsilon,
                spec.ref_policy.min_entry(),
                theory::constraint_scale(spec),
                config.base.eta_theta,
                spec.beta,
                lipschitz_proxy,
            );
            Some(2.0 * gap / (1.0 - theory::rho(spec)))
        } else {
            None
        }
    });
    Ok(NpgRunReport {
        trace: ConvergenceTrace { records },
        lipschitz_proxy,
        neighborhood,
        final_state: state,
    })
}
