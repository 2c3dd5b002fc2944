//! Baseline solvers the optimistic method is measured against.
//!
//! Three primal-oracle instantiations of the same outer loop, ordered by
//! how much primal work each outer iteration buys:
//!
//! - **finite-step** ([`pd_run`]) — `k` mirror-ascent proximal steps
//!   anchored at the current policy, then one projected dual step;
//! - **multi-shot** ([`multi_shot_run`]) — proximal steps until the
//!   per-step policy movement falls below a tolerance, then one dual step;
//! - **one-shot** ([`one_shot_run`]) — projected gradient descent directly
//!   on the convex dual, with the exact closed-form primal response.
//!
//! The outer loop is simultaneous: the dual gradient is snapshotted at the
//! iteration-entry policy, before the primal refresh. This is what makes
//! the plain finite-step method circle the saddle instead of settling on
//! it — the behavior the optimistic correction repairs — and in the
//! multi-shot limit the staleness becomes harmless because the entry
//! policy has already converged against the previous multiplier.
//!
//! The module also houses the unconstrained bilinear game
//! `min_y max_x x^T A y` ([`bilinear_run`]): simultaneous gradient play
//! expands every step by exactly `sqrt(1 + alpha^2 sigma_i^2)` along each
//! singular pair, while replacing each gradient with `2 g_t - g_{t-1}`
//! turns the same iteration into a contraction — the two-line model of
//! why the main loop needs its lookahead.

use serde::{Deserialize, Serialize};

use crate::error::{OpdError, Result};
use crate::lagrangian::{self, DualVector};
use crate::opd_dist::{self, ConvergenceTrace, OPDState, TraceRecord};
use crate::oracle::{self, SaddleSolution};
use crate::problem::{ProblemSpec, TabularPolicy};
use crate::theory;

/// Inner-loop step budget per outer iteration of the multi-shot method.
pub const INNER_BUDGET: usize = 100_000;

/// The unconstrained bilinear saddle problem `min_y max_x x^T A y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearProblem {
    /// Full-rank coupling matrix, `m` rows by `n` columns.
    pub matrix: Vec<Vec<f64>>,
    /// Stepsize `alpha > 0` shared by both players.
    pub alpha: f64,
    /// Initial max-player point, length `m`.
    pub x0: Vec<f64>,
    /// Initial min-player point, length `n`.
    pub y0: Vec<f64>,
}

impl BilinearProblem {
    /// The scalar instance `A = [sigma]` from the canonical start
    /// `z_0 = (1, 0)`.
    pub fn scalar(sigma: f64, alpha: f64) -> Self {
        BilinearProblem {
            matrix: vec![vec![sigma]],
            alpha,
            x0: vec![1.0],
            y0: vec![0.0],
        }
    }

    /// Check finiteness, shape, a positive stepsize, and full rank (the
    /// smallest singular value must exceed `1e-12` times the largest).
    ///
    /// # Errors
    ///
    /// [`OpdError::InvalidArgument`] naming the failed requirement.
    pub fn validate(&self) -> Result<()> {
        let m = self.matrix.len();
        let n = self.matrix.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(OpdError::InvalidArgument(
                "bilinear matrix must be nonempty".to_string(),
            ));
        }
        if self.matrix.iter().any(|row| row.len() != n) {
            return Err(OpdError::InvalidArgument(
                "bilinear matrix rows must have equal length".to_string(),
            ));
        }
        if self.matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OpdError::InvalidArgument(
                "bilinear matrix entries must be finite".to_string(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(OpdError::InvalidArgument(format!(
                "alpha = {} must be a positive real",
                self.alpha
            )));
        }
        if self.x0.len() != m || self.y0.len() != n {
            return Err(OpdError::InvalidArgument(format!(
                "initial point is ({}, {}), matrix is {m}x{n}",
                self.x0.len(),
                self.y0.len()
            )));
        }
        let a = nalgebra::DMatrix::from_fn(m, n, |i, j| self.matrix[i][j]);
        let svd = a.svd(false, false);
        let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let s_min = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(s_min > 1e-12 * s_max) {
            return Err(OpdError::InvalidArgument(format!(
                "bilinear matrix is rank deficient (singular values {s_min:.3e} .. {s_max:.3e})"
            )));
        }
        Ok(())
    }
}

/// Update rule for the bilinear game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BilinearMethod {
    /// Simultaneous gradient play: `x += alpha A y`, `y -= alpha A^T x`,
    /// both from the pre-step point.
    Pd,
    /// The same updates with each gradient replaced by `2 g_t - g_{t-1}`
    /// (with `g_{-1} = g_0` for the first step).
    Optimistic,
}

/// Run `t` steps of the bilinear game and return the iterate norms
/// `||z_0||, ..., ||z_t||` (length `t + 1`).
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] when `t` is zero ("T must be >= 1") or
/// the problem fails [`BilinearProblem::validate`].
pub fn bilinear_run(prob: &BilinearProblem, method: BilinearMethod, t: usize) -> Result<Vec<f64>> {
    if t < 1 {
        return Err(OpdError::InvalidArgument("T must be >= 1".to_string()));
    }
    prob.validate()?;
    let a = &prob.matrix;
    let m = a.len();
    let n = a[0].len();
    let mut x = prob.x0.clone();
    let mut y = prob.y0.clone();
    let norm = |x: &[f64], y: &[f64]| -> f64 {
        x.iter()
            .chain(y.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let mut norms = Vec::with_capacity(t + 1);
    norms.push(norm(&x, &y));
    let mut prev_gx: Option<Vec<f64>> = None;
    let mut prev_gy: Option<Vec<f64>> = None;
    for _ in 0..t {
        let gx: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| a[i][j] * y[j]).sum())
            .collect();
        let gy: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|i| a[i][j] * x[i]).sum())
            .collect();
        let (dx, dy): (Vec<f64>, Vec<f64>) = match method {
            BilinearMethod::Pd => (gx.clone(), gy.clone()),
            BilinearMethod::Optimistic => (
                gx.iter()
                    .zip(prev_gx.as_deref().unwrap_or(&gx))
                    .map(|(&g, &p)| 2.0 * g - p)
                    .collect(),
                gy.iter()
                    .zip(prev_gy.as_deref().unwrap_or(&gy))
                    .map(|(&g, &p)| 2.0 * g - p)
                    .collect(),
            ),
        };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += prob.alpha * di;
        }
        for (yj, dj) in y.iter_mut().zip(&dy) {
            *yj -= prob.alpha * dj;
        }
        prev_gx = Some(gx);
        prev_gy = Some(gy);
        norms.push(norm(&x, &y));
    }
    Ok(norms)
}

/// How much primal work one outer iteration performs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OracleKind {
    /// Exactly `k` proximal steps.
    FiniteStep {
        /// Inner steps per outer iteration, at least 1.
        k: usize,
    },
    /// The closed-form primal response (dual descent); see
    /// [`one_shot_run`].
    OneShot,
    /// Proximal steps until the per-step policy movement (largest row
    /// total variation) falls below `inner_tol`.
    MultiShot {
        /// Inner stopping tolerance, strictly positive (infinity is the
        /// documented degenerate case equal to one finite step).
        inner_tol: f64,
    },
}

/// Configuration of the baseline outer loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// The primal oracle run each outer iteration.
    pub oracle_kind: OracleKind,
    /// Literal dual stepsize multiplying the gradient.
    pub dual_step: f64,
    /// Proximal weight of the inner mirror-ascent steps.
    pub eta_theta: f64,
    /// Outer iterations to run.
    pub max_iters: usize,
    /// Optional multiplier ceiling, as in the optimistic loop.
    pub lambda_cap: Option<f64>,
}

impl BaselineConfig {
    /// Check the documented domains.
    ///
    /// # Errors
    ///
    /// [`OpdError::InvalidArgument`] listing every violated requirement.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match self.oracle_kind {
            OracleKind::FiniteStep { k } if k == 0 => {
                problems.push("finite-step oracle needs k >= 1".to_string());
            }
            OracleKind::MultiShot { inner_tol } if !(inner_tol > 0.0) => {
                problems.push(format!("inner_tol = {inner_tol} must be positive"));
            }
            _ => {}
        }
        if !(self.dual_step > 0.0 && self.dual_step.is_finite()) {
            problems.push(format!("dual_step = {} must be a positive real", self.dual_step));
        }
        if !(self.eta_theta >= 0.0 && self.eta_theta.is_finite()) {
            problems.push(format!(
                "eta_theta = {} must be a finite nonnegative real",
                self.eta_theta
            ));
        }
        if self.max_iters == 0 {
            problems.push("max_iters must be at least 1".to_string());
        }
        if let Some(cap) = self.lambda_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                problems.push(format!("lambda_cap = {cap} must be a positive real when set"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OpdError::InvalidArgument(problems.join("; ")))
        }
    }
}

/// Run proximal steps from `start` at fixed multipliers until the
/// per-step movement (largest row total variation) drops below
/// `inner_tol`; returns the converged policy and the number of steps
/// spent. At least one step is always taken.
///
/// # Errors
///
/// [`OpdError::InnerLoopBudgetExceeded`] after `budget` steps;
/// propagated proximal errors.
pub fn inner_converge(
    spec: &ProblemSpec,
    start: &TabularPolicy,
    lambda: &DualVector,
    eta_theta: f64,
    inner_tol: f64,
    budget: usize,
) -> Result<(TabularPolicy, usize)> {
    let mut policy = start.clone();
    let mut steps = 0;
    loop {
        let next = lagrangian::proximal_argmax(spec, lambda, &policy, eta_theta)?;
        steps += 1;
        let movement = next.max_row_tv(&policy);
        policy = next;
        if movement < inner_tol {
            return Ok((policy, steps));
        }
        if steps >= budget {
            return Err(OpdError::InnerLoopBudgetExceeded(steps));
        }
    }
}

/// One record of the shared outer loop, from the post-update pair with
/// the entry pair as the lag (so the potential is well defined on these
/// traces too).
#[allow(clippy::too_many_arguments)]
fn record_outer(
    spec: &ProblemSpec,
    policy: &TabularPolicy,
    lambda: &DualVector,
    prev_policy: &TabularPolicy,
    prev_lambda: &DualVector,
    iter: usize,
    inner_steps: Option<usize>,
    oracle_solution: Option<&SaddleSolution>,
) -> Result<TraceRecord> {
    let report = lagrangian::lagrangian_report(spec, policy, lambda)?;
    let (distance, phi) = match oracle_solution {
        Some(solution) => {
            let state = OPDState {
                hat_policy: policy.clone(),
                hat_lambda: lambda.clone(),
                pred_policy_prev: prev_policy.clone(),
                pred_lambda_prev: prev_lambda.clone(),
                iter,
            };
            (
                Some(oracle::distance(spec, solution, policy, lambda)?),
                Some(theory::phi(spec, &state, solution)?),
            )
        }
        None => (None, None),
    };
    Ok(TraceRecord {
        iter,
        distance,
        lagrangian_value: report.value,
        constraint_values: report.constraint_values,
        phi,
        hat_lambda: lambda.lambdas.clone(),
        inner_steps,
    })
}

/// The shared simultaneous outer loop: snapshot the dual gradient at the
/// entry policy, run the primal oracle, then take the dual step with the
/// snapshot.
fn outer_loop(
    spec: &ProblemSpec,
    config: &BaselineConfig,
    oracle_solution: Option<&SaddleSolution>,
    record_inner: bool,
) -> Result<ConvergenceTrace> {
    config.validate()?;
    let cap = config.lambda_cap.unwrap_or(f64::INFINITY);
    let mut policy = spec.ref_policy.clone();
    let mut lambda = DualVector::zeros(spec.num_constraints());
    let mut records = Vec::with_capacity(config.max_iters);
    for t in 1..=config.max_iters {
        let g = opd_dist::constraint_values(spec, &policy);
        let (next_policy, inner_steps) = match config.oracle_kind {
            OracleKind::FiniteStep { k } => {
                let mut p = policy.clone();
                for _ in 0..k {
                    p = lagrangian::proximal_argmax(spec, &lambda, &p, config.eta_theta)?;
                }
                (p, k)
            }
            OracleKind::MultiShot { inner_tol } => inner_converge(
                spec,
                &policy,
                &lambda,
                config.eta_theta,
                inner_tol,
                INNER_BUDGET,
            )?,
            OracleKind::OneShot => {
                return Err(OpdError::InvalidArgument(
                    "the one-shot oracle has its own driver (one_shot_run)".to_string(),
                ))
            }
        };
        let next_lambda = DualVector::new(
            lambda
                .lambdas
                .iter()
                .zip(&g)
                .map(|(&l, &gj)| (l - config.dual_step * gj).clamp(0.0, cap))
                .collect(),
        );
        records.push(record_outer(
            spec,
            &next_policy,
            &next_lambda,
            &policy,
            &lambda,
            t,
            record_inner.then_some(inner_steps),
            oracle_solution,
        )?);
        policy = next_policy;
        lambda = next_lambda;
    }
    Ok(ConvergenceTrace { records })
}

/// Finite-step primal-dual baseline.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] unless `config.oracle_kind` is
/// `FiniteStep`; otherwise propagated.
pub fn pd_run(
    spec: &ProblemSpec,
    config: &BaselineConfig,
    oracle_solution: Option<&SaddleSolution>,
) -> Result<ConvergenceTrace> {
    match config.oracle_kind {
        OracleKind::FiniteStep { .. } => outer_loop(spec, config, oracle_solution, false),
        _ => Err(OpdError::InvalidArgument(
            "pd_run requires the finite-step oracle".to_string(),
        )),
    }
}

/// Multi-shot baseline: inner loops to tolerance, recording the inner
/// step counts in the trace.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] unless `config.oracle_kind` is
/// `MultiShot`; [`OpdError::InnerLoopBudgetExceeded`] from a stalled
/// inner loop; otherwise propagated.
pub fn multi_shot_run(
    spec: &ProblemSpec,
    config: &BaselineConfig,
    oracle_solution: Option<&SaddleSolution>,
) -> Result<ConvergenceTrace> {
    match config.oracle_kind {
        OracleKind::MultiShot { .. } => outer_loop(spec, config, oracle_solution, true),
        _ => Err(OpdError::InvalidArgument(
            "multi_shot_run requires the multi-shot oracle".to_string(),
        )),
    }
}

/// One-shot dualization: projected gradient descent on the convex dual,
/// with the exact closed-form primal response at every multiplier.
///
/// Starts from `start` (zeros when `None`), projects into
/// `[0, lambda_max]` when the multiplier bound is available (unbounded
/// above otherwise), and returns the final multipliers, the closed-form
/// optimal policy at them, and a trace whose records carry the dual value
/// (the Lagrangian at the per-step optimal policy) and zero inner steps.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] for a zero `dual_steps`, a nonpositive
/// `dual_step`, or a wrong-length `start`; otherwise propagated.
pub fn one_shot_run(
    spec: &ProblemSpec,
    dual_steps: usize,
    dual_step: f64,
    start: Option<DualVector>,
) -> Result<(DualVector, TabularPolicy, ConvergenceTrace)> {
    if dual_steps == 0 {
        return Err(OpdError::InvalidArgument(
            "dual_steps must be at least 1".to_string(),
        ));
    }
    if !(dual_step > 0.0 && dual_step.is_finite()) {
        return Err(OpdError::InvalidArgument(format!(
            "dual_step = {dual_step} must be a positive real"
        )));
    }
    let m = spec.num_constraints();
    let mut lambda = match start {
        Some(l) => {
            if l.len() != m {
                return Err(OpdError::DimensionMismatch(format!(
                    "one_shot_run: start has length {}, spec has {m} constraints",
                    l.len()
                )));
            }
            l
        }
        None => DualVector::zeros(m),
    };
    let cap = theory::lambda_max(spec).unwrap_or(f64::INFINITY);
    let mut records = Vec::with_capacity(dual_steps);
    for t in 1..=dual_steps {
        let (_, g) = lagrangian::dual_function(spec, &lambda)?;
        lambda = DualVector::new(
            lambda
                .lambdas
                .iter()
                .zip(&g)
                .map(|(&l, &gj)| (l - dual_step * gj).clamp(0.0, cap))
                .collect(),
        );
        let (value, g_new) = lagrangian::dual_function(spec, &lambda)?;
        records.push(TraceRecord {
            iter: t,
            distance: None,
            lagrangian_value: value,
            constraint_values: g_new,
            phi: None,
            hat_lambda: lambda.lambdas.clone(),
            inner_steps: Some(0),
        });
    }
    let policy = lagrangian::proximal_argmax(spec, &lambda, &spec.ref_policy, 0.0)?;
    Ok((lambda, policy, ConvergenceTrace { records }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{toy_instance, HardConstraint, RewardTable};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    /// The reference-figure stepsizes for the toy problem: effective
    /// primal step 0.6 (so eta_theta = 1/0.6 - beta) and dual step 0.6.
    fn figure_config(oracle_kind: OracleKind) -> BaselineConfig {
        BaselineConfig {
            oracle_kind,
            dual_step: 0.6,
            eta_theta: 1.0 / 0.6 - 0.05,
            max_iters: 1000,
            lambda_cap: None,
        }
    }

    #[test]
    fn bilinear_single_step_arithmetic() {
        // One simultaneous step from (1, 0) with A = 1, alpha = 0.5:
        // x1 = 1 + 0.5 * 0 = 1, y1 = 0 - 0.5 * 1 = -0.5, so
        // ||z1||^2 = 1 + 0.25 = 1.25 = (1 + alpha^2) ||z0||^2.
        let prob = BilinearProblem::scalar(1.0, 0.5);
        let norms = bilinear_run(&prob, BilinearMethod::Pd, 1).unwrap();
        assert_eq!(norms.len(), 2);
        assert_close(norms[0], 1.0, 0.0);
        assert_close(norms[1] * norms[1], 1.25, 1e-15);
    }

    #[test]
    fn bilinear_growth_ratio_is_exact_for_scalar_coupling() {
        for &sigma in &[0.5f64, 1.0, 2.0] {
            for &alpha in &[0.1f64, 0.5] {
                let expected = (1.0 + alpha * alpha * sigma * sigma).sqrt();
                let prob = BilinearProblem::scalar(sigma, alpha);
                let norms = bilinear_run(&prob, BilinearMethod::Pd, 40).unwrap();
                for t in 0..40 {
                    assert_close(norms[t + 1] / norms[t], expected, 1e-12);
                }
            }
        }
    }

    #[test]
    fn bilinear_optimistic_correction_contracts() {
        let prob = BilinearProblem::scalar(1.0, 0.3);
        let norms = bilinear_run(&prob, BilinearMethod::Optimistic, 500).unwrap();
        assert!(
            *norms.last().unwrap() <= 1e-6,
            "final norm {:.3e}",
            norms.last().unwrap()
        );
    }

    #[test]
    fn bilinear_norms_grow_monotonically_for_full_rank_coupling() {
        // z+ = (I + alpha K) z with K skew-symmetric, so
        // ||z+||^2 = ||z||^2 + alpha^2 ||K z||^2 >= ||z||^2, strictly
        // when K z != 0 (K is nonsingular for square full-rank A).
        let prob = BilinearProblem {
            matrix: vec![
                vec![1.0, 0.3, -0.2],
                vec![0.0, 0.8, 0.5],
                vec![0.4, -0.1, 1.2],
            ],
            alpha: 0.2,
            x0: vec![1.0, -0.5, 0.25],
            y0: vec![0.3, 0.0, -1.0],
        };
        let norms = bilinear_run(&prob, BilinearMethod::Pd, 100).unwrap();
        for t in 0..100 {
            assert!(
                norms[t + 1] >= norms[t] * (1.0 - 1e-15),
                "norm shrank at step {t}: {} -> {}",
                norms[t],
                norms[t + 1]
            );
        }
        assert!(*norms.last().unwrap() > norms[0]);
    }

    #[test]
    fn bilinear_rejects_zero_iterations_and_degenerate_problems() {
        let prob = BilinearProblem::scalar(1.0, 0.5);
        let err = bilinear_run(&prob, BilinearMethod::Pd, 0).unwrap_err();
        assert!(err.to_string().contains("T must be >= 1"));
        let singular = BilinearProblem {
            matrix: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            alpha: 0.5,
            x0: vec![1.0, 0.0],
            y0: vec![0.0, 0.0],
        };
        assert!(bilinear_run(&singular, BilinearMethod::Pd, 5).is_err());
    }

    #[test]
    fn finite_step_pd_circles_the_toy_saddle_at_figure_stepsizes() {
        // With the aggressive stepsizes of the reference figure the plain
        // simultaneous method never settles: after the transient its
        // distance to the saddle stays around 0.8.
        let spec = toy_instance();
        let solution = oracle::solve_saddle(&spec, 1e-10).unwrap();
        let config = figure_config(OracleKind::FiniteStep { k: 1 });
        let trace = pd_run(&spec, &config, Some(&solution)).unwrap();
        let distances = trace.distances();
        assert_eq!(distances.len(), 1000);
        let min_late = distances[99..]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_late > 1e-3,
            "late minimum {min_late:.3e} should stay above 1e-3"
        );
    }

    #[test]
    fn zero_dual_gradient_freezes_the_multipliers() {
        // A constraint whose shifted reward is identically zero
        // contributes a zero gradient entry, so its multiplier never
        // moves from zero.
        let mut spec = toy_instance();
        spec.hard_rewards.push(HardConstraint::new(
            RewardTable::new(vec![vec![0.2, 0.2]]),
            0.2,
        ));
        let config = BaselineConfig {
            oracle_kind: OracleKind::FiniteStep { k: 1 },
            dual_step: 0.3,
            eta_theta: 1.0,
            max_iters: 50,
            lambda_cap: None,
        };
        let trace = pd_run(&spec, &config, None).unwrap();
        for record in &trace.records {
            assert_eq!(record.hat_lambda[1], 0.0);
        }
    }

    #[test]
    fn many_inner_steps_approach_the_multi_shot_limit() {
        // 50 inner steps at eta_theta = 0.1 leave a per-outer residual of
        // (2/3)^50 ~ 1e-9, indistinguishable from the converged inner
        // loop at the 1e-4 scale.
        let spec = toy_instance();
        let solution = oracle::solve_saddle(&spec, 1e-10).unwrap();
        let base = BaselineConfig {
            oracle_kind: OracleKind::FiniteStep { k: 50 },
            dual_step: 0.1,
            eta_theta: 0.1,
            max_iters: 200,
            lambda_cap: None,
        };
        let pd_trace = pd_run(&spec, &base, Some(&solution)).unwrap();
        let mut multi = base.clone();
        multi.oracle_kind = OracleKind::MultiShot { inner_tol: 1e-10 };
        let multi_trace = multi_shot_run(&spec, &multi, Some(&solution)).unwrap();
        let d_pd = *pd_trace.distances().last().unwrap();
        let d_multi = *multi_trace.distances().last().unwrap();
        assert!(
            (d_pd - d_multi).abs() <= 1e-4,
            "finite-step {d_pd:.3e} vs multi-shot {d_multi:.3e}"
        );
    }

    #[test]
    fn converged_inner_loop_reaches_the_closed_form_response() {
        // Movement below 1e-10 per step leaves the iterate within about
        // rate/(1-rate) * 1e-10 of the fixed point, far inside 1e-6.
        let spec = toy_instance();
        for lam in [0.0, 0.5, 1.0] {
            let lambda = DualVector::new(vec![lam]);
            let (policy, steps) = inner_converge(
                &spec,
                &spec.ref_policy,
                &lambda,
                1.0 / 0.6 - 0.05,
                1e-10,
                INNER_BUDGET,
            )
            .unwrap();
            let closed_form =
                lagrangian::proximal_argmax(&spec, &lambda, &spec.ref_policy, 0.0).unwrap();
            let tv = policy.max_row_tv(&closed_form);
            assert!(tv <= 1e-6, "lambda {lam}: TV {tv:.3e} after {steps} steps");
            // At the unit multiplier the start is already the fixed point,
            // so the loop stops after its mandatory first step.
            if lam != 1.0 {
                assert!(steps > 1, "lambda {lam}: expected real inner work");
            }
        }
    }

    #[test]
    fn infinite_inner_tolerance_is_exactly_one_finite_step() {
        let spec = toy_instance();
        let fs = BaselineConfig {
            oracle_kind: OracleKind::FiniteStep { k: 1 },
            dual_step: 0.2,
            eta_theta: 1.0,
            max_iters: 60,
            lambda_cap: None,
        };
        let mut ms = fs.clone();
        ms.oracle_kind = OracleKind::MultiShot {
            inner_tol: f64::INFINITY,
        };
        let a = pd_run(&spec, &fs, None).unwrap();
        let b = multi_shot_run(&spec, &ms, None).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.hat_lambda, rb.hat_lambda);
            assert_eq!(ra.lagrangian_value, rb.lagrangian_value);
            assert_eq!(rb.inner_steps, Some(1));
        }
    }

    #[test]
    fn stalled_inner_loop_reports_its_budget() {
        // An enormous proximal weight makes each inner step nearly a
        // no-op, so the movement tolerance is unreachable.
        let spec = toy_instance();
        let config = BaselineConfig {
            oracle_kind: OracleKind::MultiShot { inner_tol: 1e-12 },
            dual_step: 0.1,
            eta_theta: 1e6,
            max_iters: 1,
            lambda_cap: None,
        };
        let err = multi_shot_run(&spec, &config, None).unwrap_err();
        match err {
            OpdError::InnerLoopBudgetExceeded(steps) => assert_eq!(steps, INNER_BUDGET),
            other => panic!("expected budget error, got {other}"),
        }
    }

    #[test]
    fn one_shot_descent_finds_the_toy_multiplier() {
        let spec = toy_instance();
        let (lambda, policy, trace) = one_shot_run(&spec, 5000, 0.1, None).unwrap();
        assert_close(lambda.lambdas[0], 1.0, 1e-6);
        // At the unit multiplier the aggregated score is flat, so the
        // closed-form response is the reference policy itself.
        let tv = policy.max_row_tv(&spec.ref_policy);
        assert!(tv <= 1e-5, "TV {tv:.3e}");
        assert_eq!(trace.records.len(), 5000);
        // The final pair satisfies the optimality conditions to well
        // under the achieved dual precision.
        let g = &trace.records.last().unwrap().constraint_values;
        assert!(g[0].abs() <= 1e-10, "gradient {:.3e}", g[0]);
        assert!((lambda.lambdas[0] * g[0]).abs() <= 1e-10);
        assert!((-g[0]).max(0.0) <= 1e-10);
    }

    #[test]
    fn one_shot_dual_values_decrease_at_a_small_step() {
        let spec = toy_instance();
        let (_, _, trace) = one_shot_run(&spec, 500, 0.01, None).unwrap();
        let values: Vec<f64> = trace.records.iter().map(|r| r.lagrangian_value).collect();
        for t in 0..values.len() - 1 {
            assert!(
                values[t + 1] <= values[t] + 1e-12,
                "dual value rose at step {t}: {} -> {}",
                values[t],
                values[t + 1]
            );
        }
    }

    #[test]
    fn one_shot_started_at_the_saddle_stays_there() {
        let spec = toy_instance();
        let solution = oracle::solve_saddle(&spec, 1e-12).unwrap();
        let start = solution.lambda_star.clone();
        let (_, _, trace) = one_shot_run(&spec, 100, 0.1, Some(start.clone())).unwrap();
        for record in &trace.records {
            let dev = (record.hat_lambda[0] - start.lambdas[0]).abs();
            assert!(dev <= 1e-10, "drifted by {dev:.3e}");
        }
    }

    #[test]
    fn one_shot_iterates_remain_in_the_multiplier_box() {
        let spec = toy_instance();
        let cap = theory::lambda_max(&spec).unwrap();
        let (_, _, trace) = one_shot_run(&spec, 200, 0.9, None).unwrap();
        for record in &trace.records {
            assert!(record.hat_lambda[0] >= 0.0);
            assert!(record.hat_lambda[0] <= cap);
        }
    }

    #[test]
    fn primal_effort_orders_the_final_distances() {
        // More inner work per outer iteration buys a final iterate at
        // least as close to the saddle (ties at 1e-6 allowed): the
        // optimistic loop, the converged-inner multi-shot, exact dual
        // descent, and the one-step method, in that order. Multi-shot's
        // recorded inner effort strictly exceeds one-shot's zero.
        let spec = toy_instance();
        let solution = oracle::solve_saddle(&spec, 1e-10).unwrap();

        let opd_config = crate::opd_dist::OPDConfig {
            eta_theta: 1.0 / 0.6 - 0.05,
            eta_lambda: 1.0 / 0.6,
            dual_step_scale: 1.0,
            max_iters: 1000,
            lambda_cap: None,
        };
        let d_opd = *crate::opd_dist::run(&spec, &opd_config, Some(&solution))
            .unwrap()
            .distances()
            .last()
            .unwrap();

        let multi_config = BaselineConfig {
            oracle_kind: OracleKind::MultiShot { inner_tol: 1e-10 },
            dual_step: 0.1,
            eta_theta: 0.1,
            max_iters: 1000,
            lambda_cap: None,
        };
        let multi_trace = multi_shot_run(&spec, &multi_config, Some(&solution)).unwrap();
        let d_multi = *multi_trace.distances().last().unwrap();
        let total_inner: usize = multi_trace
            .records
            .iter()
            .map(|r| r.inner_steps.unwrap())
            .sum();
        assert!(total_inner > 0);

        let (lambda, policy, _) = one_shot_run(&spec, 1000, 0.1, None).unwrap();
        let d_one = oracle::distance(&spec, &solution, &policy, &lambda).unwrap();

        let pd_config = BaselineConfig {
            oracle_kind: OracleKind::FiniteStep { k: 1 },
            dual_step: 0.1,
            eta_theta: 0.1,
            max_iters: 1000,
            lambda_cap: None,
        };
        let d_pd = *pd_run(&spec, &pd_config, Some(&solution))
            .unwrap()
            .distances()
            .last()
            .unwrap();

        let tie = 1e-6;
        assert!(d_opd <= d_multi + tie, "opd {d_opd:.3e} vs multi {d_multi:.3e}");
        assert!(d_multi <= d_one + tie, "multi {d_multi:.3e} vs one-shot {d_one:.3e}");
        assert!(d_one <= d_pd + tie, "one-shot {d_one:.3e} vs pd {d_pd:.3e}");
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let spec = toy_instance();
        let mut config = figure_config(OracleKind::FiniteStep { k: 0 });
        assert!(pd_run(&spec, &config, None).is_err());
        config.oracle_kind = OracleKind::MultiShot { inner_tol: 0.0 };
        assert!(multi_shot_run(&spec, &config, None).is_err());
        config.oracle_kind = OracleKind::OneShot;
        assert!(pd_run(&spec, &config, None).is_err());
        assert!(one_shot_run(&spec, 0, 0.1, None).is_err());
        assert!(one_shot_run(&spec, 10, -0.1, None).is_err());
        assert!(one_shot_run(&spec, 10, 0.1, Some(DualVector::zeros(3))).is_err());
        let config = BaselineConfig {
            oracle_kind: OracleKind::FiniteStep { k: 1 },
            dual_step: 0.0,
            eta_theta: 1.0,
            max_iters: 10,
            lambda_cap: None,
        };
        assert!(pd_run(&spec, &config, None).is_err());
    }
}
