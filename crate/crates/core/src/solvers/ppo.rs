use super::{project_simplex, run_policy_gradient, AdvantageSource, SolveOutput, SolverConfig, StepOutput};
use crate::error::Result;
use crate::error::dim_check;
use crate::mdp::{self, adjoint_occupancy, FiniteMdp, PolicyMatrix, QFn};
use crate::SimRng;

/// `min(max(x, lo), hi)`.
pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Conservative surrogate for costs: `max(ratio A, clip(ratio, 1-eps, 1+eps) A)`.
pub fn cpi(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).max(clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
}

/// PPO step with state weights `d = sigma_{pi_k}^* rho` computed exactly.
pub fn ppo_update(
    mdp: &FiniteMdp,
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    config: &SolverConfig,
) -> Result<PolicyMatrix> {
    mdp::check_policy_shape(mdp, pi_k)?;
    mdp::check_q_shape(mdp, advantage)?;
    let d = adjoint_occupancy(mdp, pi_k, mdp.rho())?;
    ppo_update_weighted(pi_k, advantage, &d, config)
}

/// Projected gradient descent on the clipped surrogate
/// `sum_s d(s) sum_a pi_k(a|s) cpi(theta(a|s) / pi_k(a|s), A(s, a))`.
///
/// The partial derivative in `theta(a|s)` is `d(s) A(s, a)` while the
/// unclipped branch is active and zero otherwise. Pairs with
/// `pi_k(a|s) = 0` count as clipped and the iterate stays on the support of
/// `pi_k(s)`, where the ratio is defined.
pub fn ppo_update_weighted(
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    occupancy: &[f64],
    config: &SolverConfig,
) -> Result<PolicyMatrix> {
    let (n, m) = (pi_k.n_states(), pi_k.n_actions());
    dim_check("advantage states", n, advantage.n_states())?;
    dim_check("advantage actions", m, advantage.n_actions())?;
    dim_check("occupancy", n, occupancy.len())?;
    let eps = config.ppo_epsilon;
    let mut out = Vec::with_capacity(n * m);
    let mut grad = vec![0.0; m];
    for s in 0..n {
        let pi = pi_k.row(s);
        let adv = advantage.row(s);
        let mut theta = pi.to_vec();
        for _ in 0..config.ppo_inner_iters {
            let mut any = false;
            for a in 0..m {
                grad[a] = 0.0;
                if pi[a] <= 0.0 || adv[a] == 0.0 {
                    continue;
                }
                let ratio = theta[a] / pi[a];
                if ratio * adv[a] >= clip(ratio, 1.0 - eps, 1.0 + eps) * adv[a] {
                    grad[a] = occupancy[s] * adv[a];
                    any = true;
                }
            }
            if !any {
                break;
            }
            // stay on the face spanned by the support of pi_k(s)
            let support: Vec<usize> = (0..m).filter(|&a| pi[a] > 0.0).collect();
            let stepped: Vec<f64> =
                support.iter().map(|&a| theta[a] - config.ppo_lr * grad[a]).collect();
            for (&a, x) in support.iter().zip(project_simplex(&stepped)) {
                theta[a] = x;
            }
        }
        out.extend(theta);
    }
    Ok(PolicyMatrix::from_rows_normalized(n, m, out))
}

/// PPO from the uniform policy.
pub fn ppo_solve(
    mdp: &FiniteMdp,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    run_policy_gradient(mdp, config, source, rng, |input| {
        ppo_update_weighted(input.policy, input.advantage, input.occupancy, config)
            .map(StepOutput::plain)
    })
}
