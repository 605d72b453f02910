use std::collections::BTreeMap;
use std::time::Instant;

use super::{elapsed_ms, RunRecord, SolveOutput, SolverConfig};
use crate::error::Result;
use crate::mdp::{bellman_optimal, objective, FiniteMdp, PolicyMatrix, ValueFn};

/// Value iteration `v_{k+1} = T v_k` from `v_0 = 0`.
///
/// Stops once `||v_{k+1} - v_k||_inf <= tol`; hitting `max_iters` first
/// leaves `converged == false`. Each record scores the greedy policy of
/// the iterate exactly, and stores `||v_{k+1} - v_k||_inf` as `residual`.
pub fn value_iteration(mdp: &FiniteMdp, config: &SolverConfig) -> Result<SolveOutput> {
    config.validate()?;
    let n = mdp.n_states();
    let mut v = ValueFn::zeros(n);
    let mut policy = PolicyMatrix::uniform(n, mdp.n_actions());
    let initial_objective = objective(mdp, &policy)?;
    let mut history = Vec::new();
    let mut converged = false;

    for k in 0..config.max_iters {
        let started = Instant::now();
        let (next, greedy) = bellman_optimal(mdp, &v)?;
        let residual = next.sup_distance(&v);
        let wall_ms = elapsed_ms(started);
        v = next;
        policy = greedy;

        let mut extra = BTreeMap::new();
        extra.insert("residual".to_string(), residual);
        extra.insert("iterate_objective".to_string(), v.pair(mdp.rho()));
        history.push(RunRecord {
            iteration: k + 1,
            objective: objective(mdp, &policy)?,
            policy_snapshot: config.keep_snapshots.then(|| policy.clone()),
            wall_ms,
            extra,
        });
        if residual <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveOutput { policy, value: v, history, initial_objective, converged })
}
