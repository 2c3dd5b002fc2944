//! Crate-wide error type.
//!
//! One enum covers every failure mode the library reports; operations that
//! merely *report* problems (validation) return reports instead of errors.

use thiserror::Error;

/// Errors raised by problem construction, Lagrangian evaluation, solvers,
/// and serialization.
#[derive(Debug, Error)]
pub enum OpdError {
    /// Shapes of two objects that must agree (multiplier length, table
    /// dimensions, policy dimensions) do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A distribution places mass where its comparison distribution has
    /// none, so a KL term or log-ratio is infinite.
    #[error("support violation: {0}")]
    SupportViolation(String),

    /// Random instance generation could not find thresholds satisfying the
    /// strict-feasibility margin within the resampling budget.
    #[error(
        "instance rejection: no thresholds reached Slater margin {target:.6} \
         after {attempts} resampling attempts (best margin {best:.6})"
    )]
    InstanceRejection {
        /// Margin the generator was asked to reach.
        target: f64,
        /// Resampling attempts consumed.
        attempts: usize,
        /// Best margin seen across all attempts.
        best: f64,
    },

    /// A per-prompt policy row has collapsed below the support floor, so its
    /// Fisher block is numerically rank-collapsed.
    #[error("degenerate Fisher block at prompt {prompt}: min probability {min_prob:.3e} below floor {floor:.0e}")]
    DegenerateFisher {
        /// Prompt index of the collapsed row.
        prompt: usize,
        /// Smallest probability in the row.
        min_prob: f64,
        /// Support floor that was violated.
        floor: f64,
    },

    /// A multi-shot inner loop failed to reach its improvement tolerance
    /// within the step budget.
    #[error("inner-loop budget exceeded: {0} primal steps without reaching the improvement tolerance")]
    InnerLoopBudgetExceeded(usize),

    /// The instance has no strictly feasible policy (Slater margin <= 0),
    /// so multiplier bounds and saddle points are undefined.
    #[error("infeasible instance: Slater margin {xi:.6e} <= 0")]
    InfeasibleInstance {
        /// The (non-positive) margin found.
        xi: f64,
    },

    /// The dual minimization did not reach its residual tolerance within the
    /// iteration budget.
    #[error("no convergence: dual residual {residual:.3e} above tolerance after {iters} iterations")]
    NoConvergence {
        /// Iterations consumed.
        iters: usize,
        /// Final residual.
        residual: f64,
    },

    /// A problem specification failed validation; the message lists every
    /// violated invariant.
    #[error("invalid problem specification:\n{0}")]
    InvalidSpec(String),

    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Filesystem failure while saving or loading.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A problem file did not match the JSON schema (the message names the
    /// offending field).
    #[error("schema error: {0}")]
    Schema(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, OpdError>;
