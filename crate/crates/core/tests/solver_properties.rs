use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use mdp_lab::garnet::{random_policy, GarnetSpec};
use mdp_lab::lqr::{
    completing_square_minimizer, evaluate_linear_policy, lyapunov_residual, quadratic_q_gradient,
    random_system, LinearPolicy,
};
use mdp_lab::mdp::{bellman_optimal, objective};
use mdp_lab::solvers::{
    mirror_descent_update, mm_rkhs_inner_step, policy_iteration, ppo_update, solve, value_iteration,
    AdvantageSource, BetaMode, SolverConfig, SolverKind,
};
use mdp_lab::verify::run_identity_suite;
use mdp_lab::{FiniteMdp, KernelMetric, PolicyMatrix, QFn, SimRng, ValueFn};

fn instance(seed: u64) -> (FiniteMdp, SimRng) {
    let mut rng = SimRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=20);
    let m = rng.gen_range(1..=5);
    let b = rng.gen_range(1..=n);
    let gamma = [0.5, 0.9, 0.95][rng.gen_range(0..3)];
    let mdp = GarnetSpec::new(n, m, b, gamma, rng.gen()).generate().unwrap();
    (mdp, rng)
}

fn is_stochastic(pi: &PolicyMatrix) -> bool {
    pi.rows().all(|row| row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-10)
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_solver_returns_stochastic_policies(seed in any::<u64>(), sampled in any::<bool>()) {
        let (mdp, _) = instance(seed);
        let metric = KernelMetric::identity(mdp.n_states(), mdp.n_actions());
        let cfg = SolverConfig { max_iters: 6, keep_snapshots: true, ..Default::default() };
        let source = if sampled {
            AdvantageSource::MonteCarlo { episodes: 2, steps_per_episode: 200 }
        } else {
            AdvantageSource::Exact
        };
        for kind in SolverKind::ALL {
            let mut rng = SimRng::seed_from_u64(seed);
            let out = solve(kind, &mdp, &metric, &cfg, source, &mut rng).unwrap();
            prop_assert!(is_stochastic(&out.policy), "{kind}");
            for rec in &out.history {
                let snap = rec.policy_snapshot.as_ref().unwrap();
                prop_assert!(is_stochastic(snap), "{kind}");
                // Objectives are exact evaluations even when updates are sampled.
                prop_assert_eq!(rec.objective, objective(&mdp, snap).unwrap());
            }
        }
    }

    #[test]
    fn value_iteration_climbs_and_stays_bounded(seed in any::<u64>()) {
        let (mdp, _) = instance(seed);
        let c_max = mdp.costs().iter().copied().fold(0.0, f64::max);
        let bound = c_max / (1.0 - mdp.gamma());
        let mut prev = ValueFn::zeros(mdp.n_states());
        for k in 1..=30 {
            let cfg = SolverConfig { max_iters: k, tol: 1e-300, ..Default::default() };
            let v = value_iteration(&mdp, &cfg).unwrap().value;
            prop_assert!(prev.as_slice().iter().zip(v.as_slice()).all(|(a, b)| a <= b));
            prop_assert!(v.as_slice().iter().all(|&x| x <= bound + 1e-12));
            prev = v;
        }
    }

    #[test]
    fn policy_iteration_descends_to_a_bellman_fixed_point(seed in any::<u64>()) {
        let (mdp, _) = instance(seed);
        let out = policy_iteration(&mdp, &SolverConfig { max_iters: 1000, ..Default::default() }).unwrap();
        prop_assert!(out.converged);
        let seq = out.objectives();
        prop_assert!(seq.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let (tv, _) = bellman_optimal(&mdp, &out.value).unwrap();
        prop_assert!(sup(tv.as_slice(), out.value.as_slice()) <= 1e-8);
    }

    #[test]
    fn certified_mm_never_increases_the_objective(seed in any::<u64>()) {
        let (mdp, _) = instance(seed);
        let metric = KernelMetric::identity(mdp.n_states(), mdp.n_actions());
        let cfg = SolverConfig { max_iters: 25, beta_mode: BetaMode::Certified, ..Default::default() };
        let mut rng = SimRng::seed_from_u64(seed);
        let out = solve(SolverKind::MmRkhs, &mdp, &metric, &cfg, AdvantageSource::Exact, &mut rng).unwrap();
        let seq = out.objectives();
        prop_assert!(seq.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn constant_advantage_rows_leave_policies_alone(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let (mdp, mut rng) = instance(seed);
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let pi = random_policy(n, m, &mut rng);
        let consts: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q = QFn::new(n, m, (0..n * m).map(|i| consts[i / m] + shift).collect()).unwrap();
        let md = mirror_descent_update(&mdp, &pi, &q, 2.5).unwrap();
        prop_assert!(md.max_abs_diff(&pi) <= 1e-12);

        let r = DMatrix::identity(m, m);
        for s in 0..n {
            let out = mm_rkhs_inner_step(q.row(s), pi.row(s), pi.row(s), 0.7, 1.3, &r, None).unwrap();
            prop_assert!(sup(&out, pi.row(s)) <= 1e-12);
        }
    }

    #[test]
    fn zero_advantage_is_a_ppo_fixed_point(seed in any::<u64>()) {
        let (mdp, mut rng) = instance(seed);
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), &mut rng);
        let zero = QFn::zeros(mdp.n_states(), mdp.n_actions());
        let out = ppo_update(&mdp, &pi, &zero, &SolverConfig::default()).unwrap();
        prop_assert_eq!(out, pi);
    }

    #[test]
    fn exponent_offsets_do_not_change_the_update(seed in any::<u64>(), offset in -50.0f64..50.0) {
        let mut rng = SimRng::seed_from_u64(seed);
        let m = rng.gen_range(1..=8);
        let pi = random_policy(1, m, &mut rng);
        let p_l = random_policy(1, m, &mut rng);
        let adv: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = adv.iter().map(|a| a + offset).collect();
        let r = DMatrix::identity(m, m);
        let a = mm_rkhs_inner_step(&adv, pi.row(0), p_l.row(0), 0.4, 1.15, &r, None).unwrap();
        let b = mm_rkhs_inner_step(&shifted, pi.row(0), p_l.row(0), 0.4, 1.15, &r, None).unwrap();
        prop_assert!(sup(&a, &b) <= 1e-12);
    }

    #[test]
    fn linear_policy_values_solve_the_lyapunov_equation(seed in any::<u64>()) {
        let sys = random_system(seed).unwrap();
        let mut rng = SimRng::seed_from_u64(seed);
        let zero = LinearPolicy::zeros(sys.n_inputs(), sys.n_states());
        let scale = 1.0 / (sys.a_matrix().norm() + 1.0);
        let policy = LinearPolicy::new(
            DMatrix::from_fn(sys.n_inputs(), sys.n_states(), |_, _| rng.gen_range(-scale..scale)),
        ).unwrap();
        for p in [zero, policy] {
            let Ok(v) = evaluate_linear_policy(&sys, &p, 1e-13) else { continue };
            prop_assert!((&v - v.transpose()).amax() <= 1e-12);
            prop_assert!(v.symmetric_eigenvalues().min() >= -1e-10);
            prop_assert!(lyapunov_residual(&sys, &p, &v).unwrap() <= 1e-8 * (1.0 + v.amax()));
        }
    }

    #[test]
    fn completing_the_square_zeroes_the_gradient(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let sys = random_system(seed).unwrap();
        let mut rng = SimRng::seed_from_u64(seed ^ 1);
        let n = sys.n_states();
        let c = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = &c * c.transpose();
        let policy = completing_square_minimizer(&sys, &q, lambda).unwrap();
        for _ in 0..10 {
            let s = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let g = quadratic_q_gradient(&sys, &q, lambda, &s, &policy.action(&s));
            prop_assert!(g.norm() <= 1e-8 * (1.0 + s.norm()));
        }
    }
}

#[test]
fn identity_suite_is_reproducible() {
    let a = run_identity_suite(77, 12).unwrap();
    let b = run_identity_suite(77, 12).unwrap();
    assert_eq!(a.rows, b.rows);
    assert!(a.passed());
}
