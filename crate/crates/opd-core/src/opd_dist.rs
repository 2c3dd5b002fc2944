//! The distributional optimistic primal-dual loop.
//!
//! Each iteration interleaves *predicted* and *actual* updates:
//!
//! ```text
//!   pi_t        = prox(lambda_{t-1}, anchor = hat_pi_t)      predicted primal
//!   lambda_t    = [hat_lambda_t - s * g(pi_{t-1}) / eta_l]+  predicted dual
//!   hat_pi_{t+1}     = prox(lambda_t, anchor = hat_pi_t)          actual primal
//!   hat_lambda_{t+1} = [hat_lambda_t - s * g(pi_t) / eta_l]+      actual dual
//! ```
//!
//! where `prox(lambda, anchor)` is the closed-form KL-proximal argmax of the
//! Lagrangian ([`lagrangian::proximal_argmax`]), `g(pi)` is the vector of
//! expected shifted constraint rewards under `pi`, and `s` is the
//! `dual_step_scale`. The predicted iterates `(pi_t, lambda_t)` are evaluated
//! at the *previous* prediction's gradients — that one-step lookahead is what
//! damps the rotation that makes plain primal-dual iteration circle the
//! saddle (see [`crate::baselines`] for the non-optimistic contrast).
//!
//! Initialization: `hat_pi_0` is the reference policy, `hat_lambda_0 = 0`,
//! and the lag slots start equal to the initial iterates, which makes the
//! first optimistic step coincide with a plain step.
//!
//! # Step-size conventions
//!
//! `dual_step_scale` selects between the two dual-update conventions that
//! coexist for this scheme: `0.5` is the argmin form (one exact minimization
//! of `lambda * g + eta_l * (lambda - hat_lambda)^2`, implied step
//! `1/(2 eta_l)`), and `1.0` is the explicit-gradient form with step
//! `1/eta_l`. The recommended configuration uses `0.5`; the factor-of-two
//! ambiguity is deliberately surfaced as a config field rather than resolved
//! silently.

use serde::{Deserialize, Serialize};

use crate::error::{OpdError, Result};
use crate::lagrangian::{self, DualVector};
use crate::oracle::{self, SaddleSolution};
use crate::problem::{ProblemSpec, TabularPolicy};
use crate::theory;

/// Hyper-parameters for one optimistic primal-dual run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OPDConfig {
    /// Primal proximal weight `eta_theta > 0` on `KL(pi || anchor)`.
    pub eta_theta: f64,
    /// Dual proximal weight `eta_lambda > 0`.
    pub eta_lambda: f64,
    /// Dual step convention: `0.5` (argmin form, step `1/(2 eta_lambda)`) or
    /// `1.0` (explicit form, step `1/eta_lambda`).
    pub dual_step_scale: f64,
    /// Number of outer iterations a [`run`] performs.
    pub max_iters: usize,
    /// Optional ceiling projecting multipliers into `[0, cap]`; `None`
    /// leaves them unbounded above.
    pub lambda_cap: Option<f64>,
}

impl OPDConfig {
    /// Check the documented domain: positive step parameters, a scale of
    /// exactly `0.5` or `1.0`, at least one iteration, and a strictly
    /// positive cap when present.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            problems.push(format!("eta_theta = {} must be a positive real", self.eta_theta));
        }
        if !(self.eta_lambda > 0.0 && self.eta_lambda.is_finite()) {
            problems.push(format!("eta_lambda = {} must be a positive real", self.eta_lambda));
        }
        if self.dual_step_scale != 0.5 && self.dual_step_scale != 1.0 {
            problems.push(format!(
                "dual_step_scale = {} must be 0.5 or 1.0",
                self.dual_step_scale
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

/// The full iterate of the optimistic loop: the actual (hat) pair plus the
/// previous predicted pair, which the next step's lookahead consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OPDState {
    /// Actual policy iterate `hat_pi_t`.
    pub hat_policy: TabularPolicy,
    /// Actual multiplier iterate `hat_lambda_t`.
    pub hat_lambda: DualVector,
    /// Previous predicted policy `pi_{t-1}`.
    pub pred_policy_prev: TabularPolicy,
    /// Previous predicted multiplier `lambda_{t-1}`.
    pub pred_lambda_prev: DualVector,
    /// Iteration counter `t`.
    pub iter: usize,
}

impl OPDState {
    /// The canonical start: the reference policy with zero multipliers, lags
    /// equal to the initial iterates.
    pub fn init(spec: &ProblemSpec) -> Self {
        let m = spec.num_constraints();
        OPDState {
            hat_policy: spec.ref_policy.clone(),
            hat_lambda: DualVector::zeros(m),
            pred_policy_prev: spec.ref_policy.clone(),
            pred_lambda_prev: DualVector::zeros(m),
            iter: 0,
        }
    }
}

/// One per-iteration snapshot of a run.
///
/// `distance` and `phi` require a ground-truth saddle point and are `None`
/// when the run was not given one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Iteration index of the snapshot (1-based: the state after `iter`
    /// steps).
    pub iter: usize,
    /// Last-iterate distance `E_x[KL(pi* || hat_pi)] + ||lambda* -
    /// hat_lambda||^2`.
    pub distance: Option<f64>,
    /// Lagrangian value at the snapshot's `(hat_pi, hat_lambda)`.
    pub lagrangian_value: f64,
    /// Expected shifted constraint rewards under `hat_pi`.
    pub constraint_values: Vec<f64>,
    /// Contraction potential of the snapshot state.
    pub phi: Option<f64>,
    /// Multiplier iterate `hat_lambda`.
    pub hat_lambda: Vec<f64>,
    /// Inner primal-oracle steps spent this iteration; `None` for methods
    /// whose iterations have a fixed cost (every method in this module).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_steps: Option<usize>,
}

/// The per-iteration history of a run: one record per iteration performed,
/// each describing the state *after* that iteration's updates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Records in iteration order; `records.len()` equals the number of
    /// iterations run.
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    /// The potential sequence carried by the trace, in iteration order;
    /// empty when the run had no oracle.
    pub fn phis(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.phi).collect()
    }

    /// The distance sequence carried by the trace; empty without an oracle.
    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.distance).collect()
    }
}

/// The analysis-backed default configuration for `spec`:
/// `eta_theta = eta_lambda = 3 sqrt(m) R_max` over `m` hard constraints,
/// the argmin dual convention (`dual_step_scale = 0.5`), 200 iterations,
/// and a multiplier ceiling at the theoretical bound
/// [`theory::lambda_max`].
///
/// The ceiling is omitted when no finite bound exists: with no constraints
/// there are no multipliers to cap, and without a strictly feasible policy
/// the bound is undefined.
pub fn recommended_stepsizes(spec: &ProblemSpec) -> OPDConfig {
    let m = spec.num_constraints();
    let eta = 3.0 * (m as f64).sqrt() * spec.r_max;
    let lambda_cap = if m == 0 {
        None
    } else {
        theory::lambda_max(spec).ok()
    };
    OPDConfig {
        eta_theta: eta,
        eta_lambda: eta,
        dual_step_scale: 0.5,
        max_iters: 200,
        lambda_cap,
    }
}

/// Expected shifted constraint rewards under `policy` — the dual gradient.
pub(crate) fn constraint_values(spec: &ProblemSpec, policy: &TabularPolicy) -> Vec<f64> {
    spec.hard_rewards
        .iter()
        .map(|h| lagrangian::expected_reward(spec, policy, &h.shifted))
        .collect()
}

/// One projected dual move from `hat_lambda` along gradient `g`.
pub(crate) fn dual_update(
    hat_lambda: &DualVector,
    g: &[f64],
    config: &OPDConfig,
) -> DualVector {
    let step = config.dual_step_scale / config.eta_lambda;
    let cap = config.lambda_cap.unwrap_or(f64::INFINITY);
    DualVector::new(
        hat_lambda
            .lambdas
            .iter()
            .zip(g)
            .map(|(&l, &gj)| (l - step * gj).clamp(0.0, cap))
            .collect(),
    )
}

/// Advance `state` by one full optimistic iteration (all four updates).
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] if `config` fails validation;
/// [`OpdError::SupportViolation`] propagated from the proximal steps if an
/// anchor has lost support (does not happen from valid starts).
pub fn opd_step(spec: &ProblemSpec, state: &OPDState, config: &OPDConfig) -> Result<OPDState> {
    config.validate()?;
    // Predicted pair: evaluated at the previous prediction's gradients.
    let pred_policy = lagrangian::proximal_argmax(
        spec,
        &state.pred_lambda_prev,
        &state.hat_policy,
        config.eta_theta,
    )?;
    let g_prev = constraint_values(spec, &state.pred_policy_prev);
    let pred_lambda = dual_update(&state.hat_lambda, &g_prev, config);
    // Actual pair: evaluated at the fresh prediction's gradients.
    let hat_policy = lagrangian::proximal_argmax(spec, &pred_lambda, &state.hat_policy, config.eta_theta)?;
    let g_pred = constraint_values(spec, &pred_policy);
    let hat_lambda = dual_update(&state.hat_lambda, &g_pred, config);
    Ok(OPDState {
        hat_policy,
        hat_lambda,
        pred_policy_prev: pred_policy,
        pred_lambda_prev: pred_lambda,
        iter: state.iter + 1,
    })
}

/// Run `config.max_iters` optimistic iterations from the canonical start,
/// recording one [`TraceRecord`] per iteration (the state after that
/// iteration). With an oracle solution the records also carry the
/// last-iterate distance and the contraction potential.
///
/// # Errors
///
/// [`OpdError::InvalidArgument`] for an invalid `config`; otherwise
/// propagated from the per-step operations.
pub fn run(
    spec: &ProblemSpec,
    config: &OPDConfig,
    oracle_solution: Option<&SaddleSolution>,
) -> Result<ConvergenceTrace> {
    config.validate()?;
    if config.max_iters == 0 {
        return Err(OpdError::InvalidArgument(
            "run: max_iters must be at least 1".to_string(),
        ));
    }
    let mut state = OPDState::init(spec);
    let mut records = Vec::with_capacity(config.max_iters);
    for _ in 0..config.max_iters {
        state = opd_step(spec, &state, config)?;
        let report =
            lagrangian::lagrangian_report(spec, &state.hat_policy, &state.hat_lambda)?;
        let (distance, phi) = match oracle_solution {
            Some(solution) => (
                Some(oracle::distance(
                    spec,
                    solution,
                    &state.hat_policy,
                    &state.hat_lambda,
                )?),
                Some(theory::phi(spec, &state, solution)?),
            ),
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
    Ok(ConvergenceTrace { records })
}
