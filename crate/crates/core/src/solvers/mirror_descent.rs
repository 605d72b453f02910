use super::{run_policy_gradient, AdvantageSource, SolveOutput, SolverConfig, StepOutput};
use crate::error::{Error, Result};
use crate::mdp::{self, FiniteMdp, PolicyMatrix, QFn};
use crate::SimRng;

/// KL mirror step `pi'(a|s) ∝ pi_k(a|s) exp(-eta q(s, a))`.
///
/// Actions with zero probability keep zero probability, so the step is
/// defined on the face of the simplex that `pi_k(s)` lives on.
pub fn mirror_descent_update(
    mdp: &FiniteMdp,
    pi_k: &PolicyMatrix,
    q: &QFn,
    eta: f64,
) -> Result<PolicyMatrix> {
    mdp::check_policy_shape(mdp, pi_k)?;
    mdp::check_q_shape(mdp, q)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Contract(format!("step size must be finite and non-negative, got {eta}")));
    }
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::with_capacity(n * m);
    for (pi, q) in pi_k.rows().zip(q.rows()) {
        let shift = pi
            .iter()
            .zip(q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(_, x)| *x)
            .fold(f64::INFINITY, f64::min);
        out.extend(
            pi.iter()
                .zip(q)
                .map(|(p, x)| if *p > 0.0 { p * (-eta * (x - shift)).exp() } else { 0.0 }),
        );
    }
    Ok(PolicyMatrix::from_rows_normalized(n, m, out))
}

/// Policy mirror descent from the uniform policy with `eta_k = eta0 (k + 1)`.
///
/// Steps on the advantage rather than `q`; the update is invariant to
/// per-state shifts, and unvisited pairs of a sampled advantage sit at the
/// neutral value zero.
pub fn mirror_descent_solve(
    mdp: &FiniteMdp,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    run_policy_gradient(mdp, config, source, rng, |input| {
        let eta = config.eta(input.k);
        mirror_descent_update(mdp, input.policy, input.advantage, eta).map(StepOutput::plain)
    })
}
