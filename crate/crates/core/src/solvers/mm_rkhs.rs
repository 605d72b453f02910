use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{mean_finite, run_policy_gradient, AdvantageSource, BetaMode, SolveOutput, SolverConfig, StepOutput};
use crate::error::{dim_check, Error, Result};
use crate::mdp::{FiniteMdp, PolicyMatrix, QFn};
use crate::metrics::KernelMetric;
use crate::SimRng;

/// `||A(s, .)||_inf / sqrt(k + 1)`.
pub fn heuristic_beta(adv_row: &[f64], k: usize) -> f64 {
    adv_row.iter().fold(0.0, |m: f64, x| m.max(x.abs())) / ((k + 1) as f64).sqrt()
}

/// One exponential-weights step on the state surrogate
/// `A^T p + beta mmd^2(pi, p)` from `p_l`:
///
/// ```text
/// theta_a = -eta (A_a - beta R_a^T (pi - p_l))
/// p_a     = p_l,a exp(theta_a) / Z
/// ```
///
/// With `exponent_clip = Some(c)` each `theta_a` is clamped to `[-c, c]`.
/// Exponents are shifted by their maximum before exponentiation.
pub fn mm_rkhs_inner_step(
    adv_row: &[f64],
    pi_row: &[f64],
    p_l: &[f64],
    beta: f64,
    eta: f64,
    r_matrix: &DMatrix<f64>,
    exponent_clip: Option<f64>,
) -> Result<Vec<f64>> {
    let m = adv_row.len();
    dim_check("policy row", m, pi_row.len())?;
    dim_check("inner iterate", m, p_l.len())?;
    dim_check("kernel matrix rows", m, r_matrix.nrows())?;
    dim_check("kernel matrix columns", m, r_matrix.ncols())?;
    for (name, p) in [("policy row", pi_row), ("inner iterate", p_l)] {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| *x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Contract(format!("{name} is not a probability vector")));
        }
    }
    if !(beta >= 0.0 && beta.is_finite() && eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Contract(format!("need finite beta, eta >= 0, got {beta}, {eta}")));
    }
    Ok(inner_step(adv_row, pi_row, p_l, beta, eta, r_matrix, exponent_clip))
}

fn inner_step(
    adv_row: &[f64],
    pi_row: &[f64],
    p_l: &[f64],
    beta: f64,
    eta: f64,
    r: &DMatrix<f64>,
    clip: Option<f64>,
) -> Vec<f64> {
    let m = adv_row.len();
    let mut theta: Vec<f64> = (0..m)
        .map(|a| {
            let pull = if beta > 0.0 {
                (0..m).map(|b| r[(a, b)] * (pi_row[b] - p_l[b])).sum::<f64>()
            } else {
                0.0
            };
            -eta * (adv_row[a] - beta * pull)
        })
        .collect();
    if let Some(c) = clip {
        theta.iter_mut().for_each(|t| *t = t.clamp(-c, c));
    }
    let top = theta
        .iter()
        .zip(p_l)
        .filter(|(_, p)| **p > 0.0)
        .map(|(t, _)| *t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> =
        p_l.iter().zip(&theta).map(|(p, t)| if *p > 0.0 { p * (t - top).exp() } else { 0.0 }).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Outcome of one outer MM-RKHS iteration.
#[derive(Debug, Clone)]
pub struct MmStep {
    pub policy: PolicyMatrix,
    /// Largest l1 change made by the last inner step of any state.
    pub inner_residual: f64,
}

/// Runs `inner_iters` inner steps at every state from `p_0 = pi_k(s)`.
///
/// `betas[s]` and `etas[s]` are per state; a state with an infinite beta or
/// a zero step keeps its row.
pub fn mm_rkhs_update(
    metric: &KernelMetric,
    pi_k: &PolicyMatrix,
    advantage: &QFn,
    betas: &[f64],
    etas: &[f64],
    inner_iters: usize,
    exponent_clip: Option<f64>,
) -> Result<MmStep> {
    let (n, m) = (pi_k.n_states(), pi_k.n_actions());
    dim_check("metric actions", m, metric.n_actions())?;
    dim_check("advantage states", n, advantage.n_states())?;
    dim_check("advantage actions", m, advantage.n_actions())?;
    dim_check("betas", n, betas.len())?;
    dim_check("step sizes", n, etas.len())?;
    if betas.iter().chain(etas).any(|x| x.is_nan() || *x < 0.0) {
        return Err(Error::Contract("betas and step sizes must be non-negative".into()));
    }
    let r = metric.r_matrix();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let pi = pi_k.row(s);
            if !betas[s].is_finite() || etas[s] == 0.0 {
                return (pi.to_vec(), 0.0);
            }
            let mut p = pi.to_vec();
            let mut change = 0.0;
            for _ in 0..inner_iters {
                let next = inner_step(advantage.row(s), pi, &p, betas[s], etas[s], r, exponent_clip);
                change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
                p = next;
            }
            (p, change)
        })
        .collect();
    let inner_residual = rows.iter().fold(0.0, |acc: f64, (_, c)| acc.max(*c));
    let probs = rows.into_iter().flat_map(|(p, _)| p).collect();
    Ok(MmStep { policy: PolicyMatrix::from_rows_normalized(n, m, probs), inner_residual })
}

/// MM-RKHS from the uniform policy with `eta_k = eta0 (k + 1)`.
///
/// In [`BetaMode::Certified`] the per-state weights come from
/// [`KernelMetric::certified_state_betas`] and each state's step is capped
/// at `1 / (beta_s max|R_ij|)`, which makes every inner step decrease that
/// state's surrogate; with exact advantages the objective then never
/// increases. Exponent clipping is applied only to sampled advantages.
pub fn mm_rkhs_solve(
    mdp: &FiniteMdp,
    metric: &KernelMetric,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    metric.check_dims(mdp)?;
    let r_max = metric.r_max_abs_entry();
    run_policy_gradient(mdp, config, source, rng, |input| {
        let eta = config.eta(input.k);
        let n = mdp.n_states();
        let (betas, etas) = match config.beta_mode {
            BetaMode::Heuristic => (
                input.advantage.rows().map(|row| heuristic_beta(row, input.k)).collect(),
                vec![eta; n],
            ),
            BetaMode::Certified => {
                let betas = metric.certified_state_betas(mdp, input.advantage, input.occupancy)?;
                let etas = betas
                    .iter()
                    .map(|b| if *b > 0.0 { eta.min(1.0 / (b * r_max)) } else { eta })
                    .collect();
                (betas, etas)
            }
        };
        let clip = input.sampled.then_some(config.exponent_clip);
        let step =
            mm_rkhs_update(metric, input.policy, input.advantage, &betas, &etas, config.inner_iters, clip)?;
        Ok(StepOutput {
            policy: step.policy,
            beta_used: mean_finite(&betas),
            inner_residual: Some(step.inner_residual),
        })
    })
}
