//! Optimistic primal-dual optimization for KL-regularized constrained
//! alignment in the tabular setting.
//!
//! The problem solved here is reward maximization over tabular policies with
//! a KL anchor to a reference policy and expected-reward safety constraints:
//!
//! ```text
//!   maximize   E_{x~D, y~pi}[ sum_k w_k R_k(x,y) ]  -  beta * E_x[ KL(pi || pi_ref) ]
//!   subject to E_{x~D, y~pi}[ R_j(x,y) - b_j ]  >=  0   for every hard constraint j
//! ```
//!
//! Dualizing the constraints yields a smooth saddle-point problem over
//! (policy, multiplier) pairs. Plain primal-dual iteration circles the saddle
//! and fails in the last iterate; the optimistic scheme implemented here
//! evaluates each update at lagged *predicted* iterates and provably
//! contracts a weighted potential at a closed-form geometric rate.
//!
//! # Module map
//!
//! - [`problem`] — problem instances: validation, the canonical two-response
//!   instance, seeded random generation, JSON round-trip.
//! - [`lagrangian`] — Lagrangian evaluation, KL divergence, the closed-form
//!   KL-proximal primal argmax, the convex dual function, Slater margins.
//! - [`oracle`] — high-precision ground-truth saddle points with KKT
//!   residuals, plus the last-iterate distance metric.
//! - [`theory`] — the contraction factor rho, the potential Phi, the
//!   multiplier bound, the approximation-gap bound, and the per-step
//!   contraction certificate.
//! - [`opd_dist`] — the distributional optimistic primal-dual loop
//!   (closed-form mirror steps on the simplex).
//! - [`opd_npg`] — the same scheme in tabular-softmax parameter space via
//!   natural policy gradient, through both a Fisher-pseudoinverse path and a
//!   closed-form advantage path, with optional update noise.
//! - [`baselines`] — non-optimistic primal oracles (finite-step primal-dual,
//!   one-shot dualization, multi-shot inner loops) and the bilinear
//!   saddle-point divergence demonstration with its optimistic correction.
//!
//! # Conventions
//!
//! - All softmax/normalizer arithmetic runs in log-space with per-row max
//!   subtraction; scores of magnitude `S/beta ~ 20` are routine.
//! - Policies are row-stochastic matrices with one row per prompt; rows sum
//!   to one within 1e-12.
//! - Every operation is a pure function of its inputs; seeded generators are
//!   explicit arguments, so identical seeds reproduce identical artifacts.

pub mod baselines;
pub mod error;
pub mod lagrangian;
pub mod opd_dist;
pub mod opd_npg;
pub mod oracle;
pub mod problem;
pub mod theory;
pub mod util;

pub use error::{OpdError, Result};
