use std::collections::BTreeMap;
use std::time::Instant;

use super::{elapsed_ms, RunRecord, SolveOutput, SolverConfig};
use crate::error::Result;
use crate::mdp::{self, analyze_policy, FiniteMdp, PolicyMatrix};

/// Policy iteration from the deterministic policy that always plays action 0.
pub fn policy_iteration(mdp: &FiniteMdp, config: &SolverConfig) -> Result<SolveOutput> {
    let start = PolicyMatrix::deterministic(mdp.n_actions(), &vec![0; mdp.n_states()])?;
    policy_iteration_from(mdp, config, &start)
}

/// Exact evaluation followed by greedy improvement, until the greedy policy
/// repeats.
///
/// A deterministic policy keeps its action wherever that action is already
/// greedy up to rounding, so an optimal start stops after one improvement
/// step. Each record holds the objective of the improved policy.
pub fn policy_iteration_from(
    mdp: &FiniteMdp,
    config: &SolverConfig,
    initial: &PolicyMatrix,
) -> Result<SolveOutput> {
    config.validate()?;
    mdp::check_policy_shape(mdp, initial)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut policy = initial.clone();
    let mut analysis = analyze_policy(mdp, &policy)?;
    let initial_objective = analysis.objective;
    let mut history = Vec::new();
    let mut converged = false;

    for k in 0..config.max_iters {
        let started = Instant::now();
        let current = deterministic_actions(&policy);
        let mut actions = Vec::with_capacity(n);
        for s in 0..n {
            let row = analysis.q.row(s);
            let best = mdp::argmin_row(row);
            let keep = current.as_ref().map(|c| c[s]).filter(|&a| {
                row[a] <= row[best] + 1e-12 * (1.0 + row[best].abs())
            });
            actions.push(keep.unwrap_or(best));
        }
        let stable = current.as_deref() == Some(actions.as_slice());
        let next = PolicyMatrix::deterministic(m, &actions)?;
        let residual = next.max_abs_diff(&policy);
        policy = next;
        analysis = analyze_policy(mdp, &policy)?;
        let wall_ms = elapsed_ms(started);

        let mut extra = BTreeMap::new();
        extra.insert("residual".to_string(), residual);
        history.push(RunRecord {
            iteration: k + 1,
            objective: analysis.objective,
            policy_snapshot: config.keep_snapshots.then(|| policy.clone()),
            wall_ms,
            extra,
        });
        if stable {
            converged = true;
            break;
        }
    }
    Ok(SolveOutput { policy, value: analysis.value, history, initial_objective, converged })
}

fn deterministic_actions(pi: &PolicyMatrix) -> Option<Vec<usize>> {
    pi.rows().map(|row| row.iter().position(|&p| p == 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garnet::GarnetSpec;
    use crate::mdp::bellman_optimal;
    use crate::solvers::value_iteration;

    #[test]
    fn single_state_two_policies() {
        let mdp = FiniteMdp::new(1, 2, 0.5, vec![1.0], vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let start = PolicyMatrix::deterministic(2, &[1]).unwrap();
        let out = policy_iteration_from(&mdp, &SolverConfig::default(), &start).unwrap();
        assert!(out.converged);
        assert_eq!(out.history[0].get("residual"), Some(1.0));
        assert_eq!(out.policy.row(0), &[1.0, 0.0]);
        assert!((out.value[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_start_stops_after_one_step() {
        let mdp = GarnetSpec::new(12, 3, 3, 0.9, 5).generate().unwrap();
        let first = policy_iteration(&mdp, &SolverConfig::default()).unwrap();
        let again = policy_iteration_from(&mdp, &SolverConfig::default(), &first.policy).unwrap();
        assert_eq!(again.history.len(), 1);
        assert_eq!(again.policy, first.policy);
    }

    #[test]
    fn objective_non_increasing_and_optimal() {
        let mdp = GarnetSpec::new(20, 5, 4, 0.9, 7).generate().unwrap();
        let out = policy_iteration(&mdp, &SolverConfig::default()).unwrap();
        let objs = out.objectives();
        assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let (tv, _) = bellman_optimal(&mdp, &out.value).unwrap();
        assert!(tv.sup_distance(&out.value) <= 1e-8);
    }

    #[test]
    fn agrees_with_value_iteration() {
        let mdp = GarnetSpec::new(20, 5, 4, 0.9, 3).generate().unwrap();
        let pi = policy_iteration(&mdp, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig { max_iters: 5000, tol: 1e-12, ..Default::default() };
        let vi = value_iteration(&mdp, &cfg).unwrap();
        assert!(vi.converged);
        assert!(pi.value.sup_distance(&vi.value) <= 1e-8);
    }
}
