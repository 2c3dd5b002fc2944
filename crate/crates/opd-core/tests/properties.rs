//! Structural properties of the Lagrangian, the dual, and the solver:
//! saddle inequalities, convexity, determinism, support preservation, and
//! the multiplier bound, checked against randomized deviations.

use opd_core::lagrangian::{self, DualVector};
use opd_core::oracle;
use opd_core::problem::{random_instance, ProblemSpec, TabularPolicy};
use opd_core::theory;
use opd_core::util;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_policy(rng: &mut ChaCha8Rng, spec: &ProblemSpec) -> TabularPolicy {
    let rows = (0..spec.num_prompts)
        .map(|_| {
            let logits: Vec<f64> = (0..spec.num_responses)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let z = util::log_sum_exp(&logits);
            logits.iter().map(|l| (l - z).exp()).collect()
        })
        .collect();
    TabularPolicy::new(rows)
}

fn random_lambda(rng: &mut ChaCha8Rng, m: usize, cap: f64) -> DualVector {
    DualVector::new((0..m).map(|_| rng.gen_range(0.0..cap)).collect())
}

fn study_instances() -> Vec<ProblemSpec> {
    vec![
        random_instance(3, (4, 5, 1, 2), 1.0, 0.01).unwrap(),
        random_instance(11, (3, 4, 2, 1), 1.0, 0.02).unwrap(),
        random_instance(27, (6, 3, 1, 3), 0.8, 0.01).unwrap(),
    ]
}

#[test]
fn saddle_inequalities_hold_for_random_deviations() {
    for spec in study_instances() {
        let solution = oracle::solve_saddle(&spec, 1e-10).unwrap();
        let base = lagrangian::lagrangian_report(&spec, &solution.policy_star, &solution.lambda_star)
            .unwrap()
            .value;
        let cap = theory::lambda_max(&spec).unwrap();
        let mut rng = util::rng_from_seed(2024);
        for _ in 0..100 {
            let policy = random_policy(&mut rng, &spec);
            let deviated = lagrangian::lagrangian_report(&spec, &policy, &solution.lambda_star)
                .unwrap()
                .value;
            assert!(
                deviated <= base + 1e-9,
                "a primal deviation beat the saddle: {deviated} > {base}"
            );
            let lambda = random_lambda(&mut rng, spec.num_constraints(), cap);
            let perturbed = lagrangian::lagrangian_report(&spec, &solution.policy_star, &lambda)
                .unwrap()
                .value;
            assert!(
                perturbed >= base - 1e-9,
                "a dual deviation undercut the saddle: {perturbed} < {base}"
            );
        }
    }
}

#[test]
fn optimal_multipliers_minimize_the_dual() {
    for spec in study_instances() {
        let solution = oracle::solve_saddle(&spec, 1e-10).unwrap();
        let (d_star, _) = lagrangian::dual_function(&spec, &solution.lambda_star).unwrap();
        let cap = theory::lambda_max(&spec).unwrap();
        let mut rng = util::rng_from_seed(99);
        for _ in 0..100 {
            let lambda = random_lambda(&mut rng, spec.num_constraints(), cap);
            let (d, _) = lagrangian::dual_function(&spec, &lambda).unwrap();
            assert!(
                d >= d_star - 1e-9,
                "dual value {d} fell below the optimum {d_star}"
            );
        }
    }
}

#[test]
fn dual_function_is_convex_along_segments() {
    for spec in study_instances() {
        let cap = theory::lambda_max(&spec).unwrap().min(10.0);
        let mut rng = util::rng_from_seed(7);
        for _ in 0..50 {
            let a = random_lambda(&mut rng, spec.num_constraints(), cap);
            let b = random_lambda(&mut rng, spec.num_constraints(), cap);
            let mid = DualVector::new(
                a.lambdas
                    .iter()
                    .zip(&b.lambdas)
                    .map(|(&x, &y)| 0.5 * (x + y))
                    .collect(),
            );
            let (da, _) = lagrangian::dual_function(&spec, &a).unwrap();
            let (db, _) = lagrangian::dual_function(&spec, &b).unwrap();
            let (dm, _) = lagrangian::dual_function(&spec, &mid).unwrap();
            assert!(
                dm <= 0.5 * (da + db) + 1e-10,
                "midpoint value {dm} exceeds chord {}",
                0.5 * (da + db)
            );
        }
    }
}

#[test]
fn saddle_solver_is_deterministic() {
    let spec = random_instance(41, (5, 6, 1, 2), 1.0, 0.01).unwrap();
    let first = oracle::solve_saddle(&spec, 1e-9).unwrap();
    let second = oracle::solve_saddle(&spec, 1e-9).unwrap();
    assert_eq!(
        serde_json::to_string(&first).unwrap(),
        serde_json::to_string(&second).unwrap()
    );
}

#[test]
fn kl_dominates_twice_squared_total_variation() {
    let mut rng = util::rng_from_seed(5);
    let spec = random_instance(1, (4, 6, 1, 1), 1.0, 0.01).unwrap();
    for _ in 0..200 {
        let p = random_policy(&mut rng, &spec);
        let q = random_policy(&mut rng, &spec);
        for x in 0..spec.num_prompts {
            let kl = lagrangian::kl_divergence(p.row(x), q.row(x)).unwrap();
            let tv = util::tv_distance(p.row(x), q.row(x));
            assert!(
                kl >= 2.0 * tv * tv - 1e-12,
                "Pinsker violated: KL {kl} < 2 TV^2 {}",
                2.0 * tv * tv
            );
        }
    }
}

#[test]
fn proximal_map_preserves_support() {
    let mut rng = util::rng_from_seed(13);
    for spec in study_instances() {
        let cap = theory::lambda_max(&spec).unwrap();
        for _ in 0..20 {
            let lambda = random_lambda(&mut rng, spec.num_constraints(), cap);
            let anchor = random_policy(&mut rng, &spec);
            for eta in [0.0, 0.5, 5.0] {
                let next = lagrangian::proximal_argmax(&spec, &lambda, &anchor, eta).unwrap();
                assert!(
                    next.min_entry() > 0.0,
                    "proximal step produced an exact zero"
                );
            }
        }
        let config = opd_core::opd_dist::recommended_stepsizes(&spec);
        let mut state = opd_core::opd_dist::OPDState::init(&spec);
        for _ in 0..200 {
            state = opd_core::opd_dist::opd_step(&spec, &state, &config).unwrap();
        }
        assert!(state.hat_policy.min_entry() > 0.0);
    }
}

#[test]
fn multiplier_norm_bound_holds_across_the_population() {
    for seed in 0..50 {
        let spec = random_instance(seed, (5, 6, 1, 2), 1.0, 0.01).unwrap();
        let solution = oracle::solve_saddle(&spec, 1e-9).unwrap();
        let bound = theory::lambda_max(&spec).unwrap();
        let norm = solution.lambda_star.l1_norm();
        assert!(
            norm <= bound,
            "seed {seed}: ||lambda*||_1 = {norm} exceeds the bound {bound}"
        );
    }
}

#[test]
fn solver_certificates_meet_the_requested_tolerance() {
    for seed in [2, 9, 17, 29, 33, 44] {
        let spec = random_instance(seed, (5, 6, 1, 2), 1.0, 0.01).unwrap();
        let solution = oracle::solve_saddle(&spec, 1e-9).unwrap();
        let residual = solution.kkt.max_residual();
        assert!(
            residual <= 1e-8,
            "seed {seed}: KKT residual {residual:.3e} above 10x tolerance"
        );
    }
}
