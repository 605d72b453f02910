//! Per-state quadratic subproblems: the penalized form (OTPG) and the
//! trust-region form (TRPO) of `min_p <A(s, .), p>` around `pi_k(s)`.

use rayon::prelude::*;

use super::{
    heuristic_beta, mean_finite, project_simplex, run_policy_gradient, AdvantageSource, BetaMode,
    SolveOutput, SolverConfig, StepOutput,
};
use crate::error::{dim_check, Error, Result};
use crate::mdp::{self, FiniteMdp, PolicyMatrix, QFn};
use crate::metrics::KernelMetric;
use crate::SimRng;

/// Solution of one state's subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub p: Vec<f64>,
    /// First-order residual (gradient mapping sup norm, plus complementarity
    /// for the trust-region form).
    pub residual: f64,
    pub steps: usize,
    pub converged: bool,
    /// Penalty weight at the solution; for TRPO, the Lagrange multiplier.
    pub multiplier: f64,
}

impl RowSolution {
    fn exact(p: Vec<f64>, multiplier: f64) -> Self {
        Self { p, residual: 0.0, steps: 0, converged: true, multiplier }
    }
}

fn is_constant(row: &[f64]) -> bool {
    row.iter().all(|x| *x == row[0])
}

fn vertex(m: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[a] = 1.0;
    v
}

/// Minimises `A^T p + beta mmd^2(pi, p)` over the simplex by projected
/// gradient with step `1 / (beta lambda_max(R))`, starting at `pi`.
///
/// `beta = 0` gives the lowest-index greedy vertex, or `pi` itself when the
/// advantage row is constant; `beta = inf` gives `pi`.
pub fn otpg_row(
    adv_row: &[f64],
    pi_row: &[f64],
    beta: f64,
    metric: &KernelMetric,
    max_steps: usize,
    tol: f64,
) -> RowSolution {
    let m = adv_row.len();
    if beta.is_infinite() || is_constant(adv_row) {
        return RowSolution::exact(pi_row.to_vec(), beta);
    }
    if beta <= 0.0 {
        return RowSolution::exact(vertex(m, mdp::argmin_row(adv_row)), 0.0);
    }
    let lipschitz = beta * metric.r_max_eigenvalue();
    let mut p = pi_row.to_vec();
    let mut residual = f64::INFINITY;
    let mut steps = 0;
    while steps < max_steps {
        let diff: Vec<f64> = p.iter().zip(pi_row).map(|(a, b)| a - b).collect();
        let r_diff = metric.r_times(&diff);
        let trial: Vec<f64> =
            (0..m).map(|a| p[a] - (adv_row[a] + beta * r_diff[a]) / lipschitz).collect();
        let next = project_simplex(&trial);
        residual = lipschitz * mdp::sup_distance(&next, &p);
        steps += 1;
        p = next;
        if residual <= tol {
            break;
        }
    }
    RowSolution { p, residual, steps, converged: residual <= tol, multiplier: beta }
}

/// Minimises `<A(s, .), p>` subject to `mmd^2(pi(s), p) <= radius_sq` by
/// bisection on the multiplier of the constraint.
///
/// The greedy vertex is returned when it is feasible. Otherwise the
/// penalized solution `p(mu)` is traced until `mmd^2(pi, p(mu))` meets
/// the radius; the returned point is always feasible.
pub fn trpo_row(
    adv_row: &[f64],
    pi_row: &[f64],
    radius_sq: f64,
    metric: &KernelMetric,
    max_steps: usize,
    tol: f64,
) -> RowSolution {
    let m = adv_row.len();
    if is_constant(adv_row) {
        return RowSolution::exact(pi_row.to_vec(), 0.0);
    }
    let greedy = vertex(m, mdp::argmin_row(adv_row));
    if metric.mmd_squared_unchecked(pi_row, &greedy) <= radius_sq {
        return RowSolution::exact(greedy, 0.0);
    }
    let spread = |mu: f64| {
        let sol = otpg_row(adv_row, pi_row, mu, metric, max_steps, tol);
        let d = metric.mmd_squared_unchecked(pi_row, &sol.p);
        (sol, d)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best = spread(hi);
    while best.1 > radius_sq && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
        best = spread(hi);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let trial = spread(mid);
        if trial.1 > radius_sq {
            lo = mid;
        } else {
            hi = mid;
            best = trial;
        }
    }
    let (mut sol, d) = best;
    sol.residual += hi * (radius_sq - d).abs();
    sol.multiplier = hi;
    sol
}

/// Per-state policy update with its worst residual.
#[derive(Debug, Clone)]
pub struct PolicyUpdate {
    pub policy: PolicyMatrix,
    pub max_residual: f64,
    pub converged: bool,
}

fn assemble(pi_k: &PolicyMatrix, rows: Vec<RowSolution>) -> PolicyUpdate {
    let max_residual = rows.iter().fold(0.0, |m: f64, r| m.max(r.residual));
    let converged = rows.iter().all(|r| r.converged);
    let probs = rows.into_iter().flat_map(|r| r.p).collect();
    PolicyUpdate {
        policy: PolicyMatrix::from_rows_normalized(pi_k.n_states(), pi_k.n_actions(), probs),
        max_residual,
        converged,
    }
}

fn check_inputs(metric: &KernelMetric, pi_k: &PolicyMatrix, advantage: &QFn) -> Result<()> {
    dim_check("metric actions", metric.n_actions(), pi_k.n_actions())?;
    dim_check("metric states", metric.n_states(), pi_k.n_states())?;
    dim_check("advantage states", pi_k.n_states(), advantage.n_states())?;
    dim_check("advantage actions", pi_k.n_actions(), advantage.n_actions())
}

fn otpg_states(
    metric: &KernelMetric,
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    betas: &[f64],
    config: &SolverConfig,
) -> PolicyUpdate {
    let rows = (0..pi_k.n_states())
        .into_par_iter()
        .map(|s| {
            otpg_row(
                advantage.row(s),
                pi_k.row(s),
                betas[s],
                metric,
                config.otpg_max_steps,
                config.otpg_tol,
            )
        })
        .collect();
    assemble(pi_k, rows)
}

/// `pi'(s) = argmin_p <A(s, .), p> + beta_k w_S(s) mmd^2(pi_k(s), p)`.
pub fn otpg_update(
    metric: &KernelMetric,
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    beta_k: f64,
    config: &SolverConfig,
) -> Result<PolicyUpdate> {
    check_inputs(metric, pi_k, advantage)?;
    if beta_k.is_nan() || beta_k < 0.0 {
        return Err(Error::Contract(format!("beta must be non-negative, got {beta_k}")));
    }
    let betas: Vec<f64> = metric.weight_s().iter().map(|w| beta_k * w).collect();
    Ok(otpg_states(metric, pi_k, advantage, &betas, config))
}

/// Trust-region step with `mmd^2(pi_k(s), p) <= radius^2 w_S(s)^2` at every
/// state.
pub fn trpo_constrained_update(
    metric: &KernelMetric,
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    radius: f64,
    config: &SolverConfig,
) -> Result<PolicyUpdate> {
    check_inputs(metric, pi_k, advantage)?;
    if !(radius > 0.0) {
        return Err(Error::Contract(format!("trust-region radius must be positive, got {radius}")));
    }
    let rows = (0..pi_k.n_states())
        .into_par_iter()
        .map(|s| {
            let w = metric.weight_s()[s];
            trpo_row(
                advantage.row(s),
                pi_k.row(s),
                radius * radius * w * w,
                metric,
                config.otpg_max_steps,
                config.otpg_tol,
            )
        })
        .collect();
    Ok(assemble(pi_k, rows))
}

/// OTPG from the uniform policy.
///
/// The penalty follows `config.beta_mode`: the heuristic
/// `||A(s, .)||_inf / sqrt(k + 1)` scaled by `w_S(s)`, or the certified
/// per-state weights, for which every exact step is a descent step.
pub fn otpg_solve(
    mdp: &FiniteMdp,
    metric: &KernelMetric,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    metric.check_dims(mdp)?;
    run_policy_gradient(mdp, config, source, rng, |input| {
        let betas: Vec<f64> = match config.beta_mode {
            BetaMode::Heuristic => input
                .advantage
                .rows()
                .zip(metric.weight_s())
                .map(|(row, w)| heuristic_beta(row, input.k) * w)
                .collect(),
            BetaMode::Certified => {
                metric.certified_state_betas(mdp, input.advantage, input.occupancy)?
            }
        };
        let step = otpg_states(metric, input.policy, input.advantage, &betas, config);
        Ok(StepOutput {
            policy: step.policy,
            beta_used: mean_finite(&betas),
            inner_residual: Some(step.max_residual),
        })
    })
}

/// TRPO from the uniform policy with `radius_k = trpo_radius0 / sqrt(k + 1)`.
pub fn trpo_solve(
    mdp: &FiniteMdp,
    metric: &KernelMetric,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    metric.check_dims(mdp)?;
    run_policy_gradient(mdp, config, source, rng, |input| {
        let radius = config.trpo_radius0 / ((input.k + 1) as f64).sqrt();
        let step = trpo_constrained_update(metric, input.policy, input.advantage, radius, config)?;
        Ok(StepOutput {
            policy: step.policy,
            beta_used: None,
            inner_residual: Some(step.max_residual),
        })
    })
}
