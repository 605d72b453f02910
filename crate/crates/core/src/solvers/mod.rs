//! Policy computation: dynamic programming and the policy-gradient family.
//!
//! Every policy-gradient solver runs the same outer loop (see
//! [`run_policy_gradient`]): obtain an advantage for the current policy,
//! exactly or from Monte-Carlo samples, apply one update, then score the new
//! policy with exact policy evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garnet::estimate_advantage_mc;
use crate::mdp::{analyze_policy, FiniteMdp, PolicyAnalysis, PolicyMatrix, QFn, ValueFn};
use crate::metrics::KernelMetric;
use crate::SimRng;

mod mirror_descent;
mod mm_rkhs;
mod otpg;
mod policy_iteration;
mod ppo;
mod value_iteration;

pub use mirror_descent::{mirror_descent_solve, mirror_descent_update};
pub use mm_rkhs::{heuristic_beta, mm_rkhs_inner_step, mm_rkhs_solve, mm_rkhs_update, MmStep};
pub use otpg::{
    otpg_row, otpg_solve, otpg_update, trpo_constrained_update, trpo_row, trpo_solve, PolicyUpdate,
    RowSolution,
};
pub use policy_iteration::{policy_iteration, policy_iteration_from};
pub use ppo::{clip, cpi, ppo_solve, ppo_update, ppo_update_weighted};
pub use value_iteration::value_iteration;

/// How MM-RKHS and OTPG pick the weight of the MMD penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `beta_k(s) = ||A_k(s, .)||_inf / sqrt(k + 1)`.
    #[default]
    Heuristic,
    /// Per-state weights that make the update a true majorizer, see
    /// [`KernelMetric::certified_state_betas`].
    Certified,
}

fn default_max_iters() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-10
}
fn default_eta0() -> f64 {
    1.15
}
fn default_inner_iters() -> usize {
    1
}
fn default_ppo_epsilon() -> f64 {
    0.2
}
fn default_ppo_lr() -> f64 {
    0.8
}
fn default_ppo_inner_iters() -> usize {
    10
}
fn default_exponent_clip() -> f64 {
    1.5
}
fn default_trpo_radius0() -> f64 {
    0.5
}
fn default_otpg_max_steps() -> usize {
    10_000
}
fn default_otpg_tol() -> f64 {
    1e-8
}

/// Hyperparameters shared by all solvers; each solver reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Sup-norm stopping tolerance for value iteration.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub beta_mode: BetaMode,
    /// Step-size schedule `eta_k = eta0 (k + 1)`.
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    /// Exponential-weights steps per state and outer iteration.
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
    #[serde(default = "default_ppo_epsilon")]
    pub ppo_epsilon: f64,
    #[serde(default = "default_ppo_lr")]
    pub ppo_lr: f64,
    #[serde(default = "default_ppo_inner_iters")]
    pub ppo_inner_iters: usize,
    /// Bound on the MM-RKHS exponent when advantages are sampled.
    #[serde(default = "default_exponent_clip")]
    pub exponent_clip: f64,
    /// Trust-region schedule `radius_k = trpo_radius0 / sqrt(k + 1)`.
    #[serde(default = "default_trpo_radius0")]
    pub trpo_radius0: f64,
    #[serde(default = "default_otpg_max_steps")]
    pub otpg_max_steps: usize,
    #[serde(default = "default_otpg_tol")]
    pub otpg_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub keep_snapshots: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            tol: default_tol(),
            beta_mode: BetaMode::default(),
            eta0: default_eta0(),
            inner_iters: default_inner_iters(),
            ppo_epsilon: default_ppo_epsilon(),
            ppo_lr: default_ppo_lr(),
            ppo_inner_iters: default_ppo_inner_iters(),
            exponent_clip: default_exponent_clip(),
            trpo_radius0: default_trpo_radius0(),
            otpg_max_steps: default_otpg_max_steps(),
            otpg_tol: default_otpg_tol(),
            seed: 0,
            keep_snapshots: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol", self.tol),
            ("eta0", self.eta0),
            ("ppo_lr", self.ppo_lr),
            ("exponent_clip", self.exponent_clip),
            ("trpo_radius0", self.trpo_radius0),
            ("otpg_tol", self.otpg_tol),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Contract(format!("{name} must be positive, got {x}")));
            }
        }
        let counts = [
            ("max_iters", self.max_iters),
            ("inner_iters", self.inner_iters),
            ("ppo_inner_iters", self.ppo_inner_iters),
            ("otpg_max_steps", self.otpg_max_steps),
        ];
        for (name, k) in counts {
            if k == 0 {
                return Err(Error::Contract(format!("{name} must be at least 1")));
            }
        }
        if !(self.ppo_epsilon > 0.0 && self.ppo_epsilon < 1.0) {
            return Err(Error::Contract(format!("ppo_epsilon {} outside (0, 1)", self.ppo_epsilon)));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// `eta_k = eta0 (k + 1)`.
    pub fn eta(&self, k: usize) -> f64 {
        self.eta0 * (k + 1) as f64
    }
}

/// Where a policy-gradient solver gets its advantage function from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageSource {
    Exact,
    MonteCarlo { episodes: usize, steps_per_episode: usize },
}

impl AdvantageSource {
    pub fn is_sampled(&self) -> bool {
        matches!(self, AdvantageSource::MonteCarlo { .. })
    }
}

/// Telemetry for one solver iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    /// `<v_pi, rho>` of the iterate, from exact policy evaluation.
    pub objective: f64,
    pub policy_snapshot: Option<PolicyMatrix>,
    pub wall_ms: f64,
    /// Diagnostics: `residual`, `beta_used`, `inner_residual`, `samples`.
    pub extra: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.extra.get(key).copied()
    }
}

/// Result of any solver run.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub policy: PolicyMatrix,
    pub value: ValueFn,
    pub history: Vec<RunRecord>,
    /// `<v_{pi_0}, rho>` of the starting policy.
    pub initial_objective: f64,
    pub converged: bool,
}

impl SolveOutput {
    pub fn final_objective(&self) -> f64 {
        self.history.last().map_or(self.initial_objective, |r| r.objective)
    }

    /// `<v_{pi_k}, rho>` for `k = 0..=K`.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.history.iter().map(|r| r.objective))
            .collect()
    }
}

/// Writes a run history as CSV with columns
/// `iteration,objective,residual,beta_used,inner_residual,wall_ms`.
pub fn write_history_csv<W: Write>(history: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "iteration,objective,residual,beta_used,inner_residual,wall_ms")?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.objective,
            opt(r.get("residual")),
            opt(r.get("beta_used")),
            opt(r.get("inner_residual")),
            r.wall_ms
        )?;
    }
    Ok(())
}

/// The seven solvers known to the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ValueIteration,
    PolicyIteration,
    Ppo,
    MirrorDescent,
    Otpg,
    Trpo,
    MmRkhs,
}

impl SolverKind {
    pub const ALL: [SolverKind; 7] = [
        SolverKind::ValueIteration,
        SolverKind::PolicyIteration,
        SolverKind::Ppo,
        SolverKind::MirrorDescent,
        SolverKind::Otpg,
        SolverKind::Trpo,
        SolverKind::MmRkhs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::ValueIteration => "value_iteration",
            SolverKind::PolicyIteration => "policy_iteration",
            SolverKind::Ppo => "ppo",
            SolverKind::MirrorDescent => "mirror_descent",
            SolverKind::Otpg => "otpg",
            SolverKind::Trpo => "trpo",
            SolverKind::MmRkhs => "mm_rkhs",
        }
    }

    /// Whether the solver consumes advantage estimates (and so samples).
    pub fn is_policy_gradient(&self) -> bool {
        !matches!(self, SolverKind::ValueIteration | SolverKind::PolicyIteration)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown solver '{s}'")))
    }
}

/// Runs `kind` from its default starting point.
///
/// Dynamic-programming solvers ignore `source` and `rng`.
pub fn solve(
    kind: SolverKind,
    mdp: &FiniteMdp,
    metric: &KernelMetric,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
) -> Result<SolveOutput> {
    match kind {
        SolverKind::ValueIteration => value_iteration(mdp, config),
        SolverKind::PolicyIteration => policy_iteration(mdp, config),
        SolverKind::Ppo => ppo_solve(mdp, config, source, rng),
        SolverKind::MirrorDescent => mirror_descent_solve(mdp, config, source, rng),
        SolverKind::Otpg => otpg_solve(mdp, metric, config, source, rng),
        SolverKind::Trpo => trpo_solve(mdp, metric, config, source, rng),
        SolverKind::MmRkhs => mm_rkhs_solve(mdp, metric, config, source, rng),
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    x.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// What a policy-gradient step sees about the current iterate.
pub(crate) struct StepInput<'a> {
    pub k: usize,
    pub policy: &'a PolicyMatrix,
    pub advantage: &'a QFn,
    /// Discounted state weights `sigma^* rho` (estimated when sampled).
    pub occupancy: &'a [f64],
    pub sampled: bool,
}

pub(crate) struct StepOutput {
    pub policy: PolicyMatrix,
    pub beta_used: Option<f64>,
    pub inner_residual: Option<f64>,
}

impl StepOutput {
    pub fn plain(policy: PolicyMatrix) -> Self {
        Self { policy, beta_used: None, inner_residual: None }
    }
}

/// Shared outer loop of the policy-gradient solvers, starting from the
/// uniform policy.
pub(crate) fn run_policy_gradient(
    mdp: &FiniteMdp,
    config: &SolverConfig,
    source: AdvantageSource,
    rng: &mut SimRng,
    mut step: impl FnMut(&StepInput<'_>) -> Result<StepOutput>,
) -> Result<SolveOutput> {
    config.validate()?;
    let mut policy = PolicyMatrix::uniform(mdp.n_states(), mdp.n_actions());
    let started = Instant::now();
    let mut analysis: PolicyAnalysis = analyze_policy(mdp, &policy)?;
    let mut analysis_ms = elapsed_ms(started);
    let initial_objective = analysis.objective;
    let mut history = Vec::with_capacity(config.max_iters);
    let mut samples = 0u64;

    for k in 0..config.max_iters {
        let started = Instant::now();
        let (advantage, occupancy, step_samples) = match source {
            AdvantageSource::Exact => (analysis.advantage.clone(), analysis.occupancy.clone(), 0),
            AdvantageSource::MonteCarlo { episodes, steps_per_episode } => {
                let est = estimate_advantage_mc(mdp, &policy, episodes, steps_per_episode, rng)?;
                let occ = est.occupancy_estimate(mdp.gamma());
                (est.advantage, occ, est.samples)
            }
        };
        samples += step_samples;
        let out = step(&StepInput {
            k,
            policy: &policy,
            advantage: &advantage,
            occupancy: &occupancy,
            sampled: source.is_sampled(),
        })?;
        let mut wall_ms = elapsed_ms(started);
        if !source.is_sampled() {
            wall_ms += analysis_ms;
        }

        let residual = out.policy.max_abs_diff(&policy);
        policy = out.policy;
        let scoring = Instant::now();
        analysis = analyze_policy(mdp, &policy)?;
        analysis_ms = elapsed_ms(scoring);

        let mut extra = BTreeMap::new();
        extra.insert("residual".to_string(), residual);
        extra.insert("samples".to_string(), samples as f64);
        if let Some(b) = out.beta_used {
            extra.insert("beta_used".to_string(), b);
        }
        if let Some(r) = out.inner_residual {
            extra.insert("inner_residual".to_string(), r);
        }
        history.push(RunRecord {
            iteration: k + 1,
            objective: analysis.objective,
            policy_snapshot: config.keep_snapshots.then(|| policy.clone()),
            wall_ms,
            extra,
        });
    }
    Ok(SolveOutput {
        policy,
        value: analysis.value,
        history,
        initial_objective,
        converged: true,
    })
}

pub(crate) fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub(crate) fn mean_finite(xs: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, -0.5]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_simplex(&[0.2, 0.2, 0.2]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn projection_is_on_simplex_and_closest(x in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_simplex(&x);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            // optimality: <x - p, q - p> <= 0 for every vertex q
            for j in 0..x.len() {
                let inner: f64 = (0..x.len())
                    .map(|i| (x[i] - p[i]) * (if i == j { 1.0 } else { 0.0 } - p[i]))
                    .sum();
                prop_assert!(inner <= 1e-12);
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in SolverKind::ALL {
            assert_eq!(kind.name().parse::<SolverKind>().unwrap(), kind);
        }
        assert!("newton".parse::<SolverKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { ppo_epsilon: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { max_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let parsed: SolverConfig = toml::from_str("max_iters = 7\nbeta_mode = \"certified\"").unwrap();
        assert_eq!(parsed.max_iters, 7);
        assert_eq!(parsed.beta_mode, BetaMode::Certified);
        assert_eq!(parsed.eta0, 1.15);
    }
}
