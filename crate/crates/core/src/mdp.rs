//! Finite discounted-cost MDPs and their linear operators.
//!
//! Everything is dense and row-major. For an MDP with `n` states and `m`
//! actions the cost is stored as `cost[s * m + a]` and the kernel as
//! `transition[(s * m + a) * n + s']`.
//!
//! The operators follow the usual composition rules:
//!
//! * `P : R^n -> R^{n x m}`, `[P v](s, a) = sum_{s'} P(s'|s, a) v(s')`
//! * `pi : R^{n x m} -> R^n`, `[pi q](s) = sum_a pi(a|s) q(s, a)`
//! * `P_pi = pi P`, the state-to-state kernel under a policy
//! * `sigma_pi = (I - gamma P_pi)^{-1}`, the occupancy resolvent
//!
//! Costs are minimised throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Tolerance on probability vectors supplied by callers.
pub const PROB_TOL: f64 = 1e-12;

/// Tolerance on quantities derived by floating-point linear algebra.
pub const DERIVED_TOL: f64 = 1e-8;

fn check_probability(label: &str, p: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &x in p {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::Contract(format!("{label}: entry {x} is not a probability")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Contract(format!("{label}: sums to {sum}, expected 1")));
    }
    Ok(())
}

/// A finite discounted-cost MDP `(S, A, P, c, rho, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument")]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    cost: Vec<f64>,
    transition: Vec<f64>,
}

/// On-disk layout of an MDP. Field names are part of the file format.
#[derive(Deserialize)]
struct MdpDocument {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    cost: Vec<f64>,
    transition: Vec<f64>,
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        FiniteMdp::new(doc.n_states, doc.n_actions, doc.gamma, doc.rho, doc.cost, doc.transition)
    }
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        cost: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Contract("MDP needs at least one state and one action".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Contract(format!("discount {gamma} outside [0, 1)")));
        }
        dim_check("rho", n_states, rho.len())?;
        dim_check("cost", n_states * n_actions, cost.len())?;
        dim_check("transition", n_states * n_actions * n_states, transition.len())?;
        check_probability("rho", &rho)?;
        if let Some(c) = cost.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::Contract(format!("cost entry {c} is negative or not finite")));
        }
        for (sa, row) in transition.chunks_exact(n_states).enumerate() {
            check_probability(
                &format!("transition row (s={}, a={})", sa / n_actions, sa % n_actions),
                row,
            )?;
        }
        Ok(Self { n_states, n_actions, gamma, rho, cost, transition })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    /// Row-major `[n_states x n_actions]` cost table.
    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    /// `P(. | s, a)` as a slice of length `n_states`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        let start = (s * self.n_actions + a) * n;
        &self.transition[start..start + n]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// The cost table as a [`QFn`].
    pub fn cost_fn(&self) -> QFn {
        QFn { n_states: self.n_states, n_actions: self.n_actions, q: self.cost.clone() }
    }

    /// Copy of this MDP with a different initial distribution.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            rho,
            self.cost.clone(),
            self.transition.clone(),
        )
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_json(BufReader::new(File::open(path)?))
    }
}

/// A function on states: value functions, potentials, `c_pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFn {
    v: Vec<f64>,
}

impl ValueFn {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("value function has non-finite entries".into()));
        }
        Ok(Self { v })
    }

    pub fn zeros(n: usize) -> Self {
        Self { v: vec![0.0; n] }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { v: vec![value; n] }
    }

    pub(crate) fn from_vec(v: Vec<f64>) -> Self {
        Self { v }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.v
    }

    /// `<v, mu>`.
    pub fn pair(&self, mu: &[f64]) -> f64 {
        self.v.iter().zip(mu).map(|(a, b)| a * b).sum()
    }

    pub fn sup_distance(&self, other: &ValueFn) -> f64 {
        sup_distance(&self.v, &other.v)
    }
}

impl std::ops::Index<usize> for ValueFn {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.v[s]
    }
}

/// A function on state-action pairs, row-major `[n_states x n_actions]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFn {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl QFn {
    pub fn new(n_states: usize, n_actions: usize, q: Vec<f64>) -> Result<Self> {
        dim_check("q-function", n_states * n_actions, q.len())?;
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("q-function has non-finite entries".into()));
        }
        Ok(Self { n_states, n_actions, q })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, q: vec![0.0; n_states * n_actions] }
    }

    pub(crate) fn from_vec(n_states: usize, n_actions: usize, q: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), n_states * n_actions);
        Self { n_states, n_actions, q }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.q.chunks_exact(self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A stationary randomized policy, one probability row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMatrix {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyMatrix {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Contract("policy needs at least one state and one action".into()));
        }
        dim_check("policy", n_states * n_actions, probs.len())?;
        for (s, row) in probs.chunks_exact(n_actions).enumerate() {
            check_probability(&format!("policy row {s}"), row)?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    /// Builds a policy from non-negative rows, rescaling each to sum to one.
    pub(crate) fn from_rows_normalized(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Self {
        for row in probs.chunks_exact_mut(n_actions) {
            normalize_in_place(row);
        }
        Self { n_states, n_actions, probs }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// One-hot rows selecting `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Contract(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `(1 - eps) * self + eps * other`, a valid policy for `eps` in `[0, 1]`.
    pub fn mixture(&self, other: &PolicyMatrix, eps: f64) -> Result<PolicyMatrix> {
        self.check_same_shape(other)?;
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Contract(format!("mixture weight {eps} outside [0, 1]")));
        }
        let probs =
            self.probs.iter().zip(&other.probs).map(|(p, q)| p + eps * (q - p)).collect();
        Ok(Self::from_rows_normalized(self.n_states, self.n_actions, probs))
    }

    pub fn max_abs_diff(&self, other: &PolicyMatrix) -> f64 {
        sup_distance(&self.probs, &other.probs)
    }

    /// Index of the most probable action in each state (lowest index on ties).
    pub fn mode_actions(&self) -> Vec<usize> {
        self.rows().map(argmin_first_by(|p: f64| -p)).collect()
    }

    pub(crate) fn check_same_shape(&self, other: &PolicyMatrix) -> Result<()> {
        dim_check("policy states", self.n_states, other.n_states)?;
        dim_check("policy actions", self.n_actions, other.n_actions)
    }
}

/// Rescales `row` to unit mass; rows already stochastic up to rounding are
/// left untouched so that fixed points stay bitwise fixed.
pub(crate) fn normalize_in_place(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() > 8.0 * f64::EPSILON {
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Index of the smallest `key(x)`, keeping the lowest index on ties.
fn argmin_first_by(key: impl Fn(f64) -> f64) -> impl Fn(&[f64]) -> usize {
    move |row: &[f64]| {
        let mut best = 0;
        for (i, &x) in row.iter().enumerate().skip(1) {
            if key(x) < key(row[best]) {
                best = i;
            }
        }
        best
    }
}

fn check_policy(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<()> {
    dim_check("policy states", mdp.n_states, pi.n_states)?;
    dim_check("policy actions", mdp.n_actions, pi.n_actions)
}

fn check_qfn(mdp: &FiniteMdp, q: &QFn) -> Result<()> {
    dim_check("q-function states", mdp.n_states, q.n_states)?;
    dim_check("q-function actions", mdp.n_actions, q.n_actions)
}

/// `[P v](s, a) = sum_{s'} P(s'|s, a) v(s')`.
pub fn apply_p(mdp: &FiniteMdp, v: &ValueFn) -> Result<QFn> {
    dim_check("value function", mdp.n_states, v.len())?;
    let q = mdp
        .transition
        .chunks_exact(mdp.n_states)
        .map(|row| row.iter().zip(&v.v).map(|(p, x)| p * x).sum())
        .collect();
    Ok(QFn::from_vec(mdp.n_states, mdp.n_actions, q))
}

/// `[pi q](s) = sum_a pi(a|s) q(s, a)`.
pub fn apply_policy(pi: &PolicyMatrix, q: &QFn) -> Result<ValueFn> {
    dim_check("q-function states", pi.n_states, q.n_states)?;
    dim_check("q-function actions", pi.n_actions, q.n_actions)?;
    let v = pi
        .rows()
        .zip(q.rows())
        .map(|(p, qs)| p.iter().zip(qs).map(|(a, b)| a * b).sum())
        .collect();
    Ok(ValueFn::from_vec(v))
}

/// `P_pi(s'|s) = sum_a pi(a|s) P(s'|s, a)` as a dense `n x n` matrix.
pub fn transition_under_policy(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<DMatrix<f64>> {
    check_policy(mdp, pi)?;
    let n = mdp.n_states;
    let mut rows = vec![0.0; n * n];
    for (s, out) in rows.chunks_exact_mut(n).enumerate() {
        for (a, &w) in pi.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(mdp.transition_row(s, a)) {
                *o += w * p;
            }
        }
    }
    Ok(DMatrix::from_row_slice(n, n, &rows))
}

/// `I - gamma P_pi`.
pub(crate) fn resolvent_system(mdp: &FiniteMdp, p_pi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.n_states;
    DMatrix::identity(n, n) - p_pi * mdp.gamma
}

/// `sigma_pi = (I - gamma P_pi)^{-1}` by dense LU.
pub fn occupancy_resolvent(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<DMatrix<f64>> {
    let p_pi = transition_under_policy(mdp, pi)?;
    resolvent_system(mdp, &p_pi)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("I - gamma P_pi is singular".into()))
}

/// Discounted state-visitation weights `rho^T (I - gamma P_pi)^{-1}`.
///
/// The weights are unnormalized and sum to `1 / (1 - gamma)`.
pub fn adjoint_occupancy(mdp: &FiniteMdp, pi: &PolicyMatrix, rho: &[f64]) -> Result<Vec<f64>> {
    dim_check("rho", mdp.n_states, rho.len())?;
    check_probability("rho", rho)?;
    let p_pi = transition_under_policy(mdp, pi)?;
    solve_transposed(&resolvent_system(mdp, &p_pi), rho)
}

pub(crate) fn solve(system: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    system
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

pub(crate) fn solve_transposed(system: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    solve(&system.transpose(), rhs)
}

/// `c_pi = pi c`.
pub fn cost_under_policy(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<ValueFn> {
    check_policy(mdp, pi)?;
    apply_policy(pi, &mdp.cost_fn())
}

/// `v_pi = sigma_pi c_pi`, solved directly.
pub fn evaluate_policy(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<ValueFn> {
    let c_pi = cost_under_policy(mdp, pi)?;
    let p_pi = transition_under_policy(mdp, pi)?;
    Ok(ValueFn::from_vec(solve(&resolvent_system(mdp, &p_pi), c_pi.as_slice())?))
}

/// `J_pi(rho) = <v_pi, rho>`.
pub fn objective(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<f64> {
    Ok(evaluate_policy(mdp, pi)?.pair(&mdp.rho))
}

/// `c + gamma P v`.
pub fn q_from_value(mdp: &FiniteMdp, v: &ValueFn) -> Result<QFn> {
    let mut q = apply_p(mdp, v)?;
    for (x, c) in q.q.iter_mut().zip(&mdp.cost) {
        *x = c + mdp.gamma * *x;
    }
    Ok(q)
}

/// `q_pi = c + gamma P v_pi`.
pub fn q_function(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<QFn> {
    q_from_value(mdp, &evaluate_policy(mdp, pi)?)
}

/// `q(s, a) - v(s)`.
pub fn advantage_from(q: &QFn, v: &ValueFn) -> Result<QFn> {
    dim_check("value function", q.n_states, v.len())?;
    let m = q.n_actions;
    let adv = q.q.iter().enumerate().map(|(i, x)| x - v.v[i / m]).collect();
    Ok(QFn::from_vec(q.n_states, m, adv))
}

/// `A_pi = q_pi - v_pi`.
pub fn advantage(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<QFn> {
    let v = evaluate_policy(mdp, pi)?;
    advantage_from(&q_from_value(mdp, &v)?, &v)
}

/// Exact quantities of one policy, computed with a single pair of solves.
#[derive(Debug, Clone)]
pub struct PolicyAnalysis {
    pub value: ValueFn,
    pub q: QFn,
    pub advantage: QFn,
    /// `sigma_pi^* rho`.
    pub occupancy: Vec<f64>,
    pub objective: f64,
}

pub fn analyze_policy(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<PolicyAnalysis> {
    let c_pi = cost_under_policy(mdp, pi)?;
    let p_pi = transition_under_policy(mdp, pi)?;
    let system = resolvent_system(mdp, &p_pi);
    let value = ValueFn::from_vec(solve(&system, c_pi.as_slice())?);
    let occupancy = solve_transposed(&system, &mdp.rho)?;
    let q = q_from_value(mdp, &value)?;
    let advantage = advantage_from(&q, &value)?;
    let objective = value.pair(&mdp.rho);
    Ok(PolicyAnalysis { value, q, advantage, occupancy, objective })
}

/// Lowest-index minimiser of one row.
pub(crate) fn argmin_row(row: &[f64]) -> usize {
    argmin_first_by(|x| x)(row)
}

/// Lowest-index minimiser of each row of `q`.
pub fn greedy_actions(q: &QFn) -> Vec<usize> {
    q.rows().map(argmin_first_by(|x| x)).collect()
}

/// `[T v](s) = min_a c(s, a) + gamma [P v](s, a)` with its greedy selector.
///
/// Ties go to the lowest action index.
pub fn bellman_optimal(mdp: &FiniteMdp, v: &ValueFn) -> Result<(ValueFn, PolicyMatrix)> {
    let q = q_from_value(mdp, v)?;
    let actions = greedy_actions(&q);
    let tv = actions.iter().enumerate().map(|(s, &a)| q.get(s, a)).collect();
    let policy = PolicyMatrix::deterministic(mdp.n_actions, &actions)?;
    Ok((ValueFn::from_vec(tv), policy))
}

/// `[T_pi v] = c_pi + gamma P_pi v`.
pub fn bellman_policy(mdp: &FiniteMdp, pi: &PolicyMatrix, v: &ValueFn) -> Result<ValueFn> {
    apply_policy(pi, &q_from_value(mdp, v)?)
}

/// For each state, the actions whose `q` is within `tol` of the row minimum.
pub fn near_optimal_actions(q: &QFn, tol: f64) -> Vec<Vec<usize>> {
    q.rows()
        .map(|row| {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            (0..row.len()).filter(|&a| row[a] <= min + tol).collect()
        })
        .collect()
}

/// A cost-shaped MDP together with the uniform offset added to keep costs
/// non-negative.
#[derive(Debug, Clone)]
pub struct ShapedMdp {
    pub mdp: FiniteMdp,
    pub shift: f64,
}

/// Replaces `c` by `c + gamma P phi - phi`, then adds the smallest constant
/// that makes every cost non-negative.
///
/// The optimal value of the result is `v* - phi + shift / (1 - gamma)`.
pub fn shape_cost(mdp: &FiniteMdp, phi: &ValueFn) -> Result<ShapedMdp> {
    let p_phi = apply_p(mdp, phi)?;
    let m = mdp.n_actions;
    let mut cost: Vec<f64> = mdp
        .cost
        .iter()
        .zip(&p_phi.q)
        .enumerate()
        .map(|(i, (c, pv))| c + mdp.gamma * pv - phi.v[i / m])
        .collect();
    let min = cost.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = (-min).max(0.0);
    if shift > 0.0 {
        cost.iter_mut().for_each(|c| *c = (*c + shift).max(0.0));
    }
    let shaped = FiniteMdp { cost, ..mdp.clone() };
    Ok(ShapedMdp { mdp: shaped, shift })
}

pub(crate) fn check_q_shape(mdp: &FiniteMdp, q: &QFn) -> Result<()> {
    check_qfn(mdp, q)
}

pub(crate) fn check_policy_shape(mdp: &FiniteMdp, pi: &PolicyMatrix) -> Result<()> {
    check_policy(mdp, pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two states, every action moves to state 1 which is absorbing.
    fn chain(cost0: f64, gamma: f64, n_actions: usize) -> FiniteMdp {
        let mut transition = Vec::new();
        for _s in 0..2 {
            for _a in 0..n_actions {
                transition.extend_from_slice(&[0.0, 1.0]);
            }
        }
        let mut cost = vec![cost0; n_actions];
        cost.extend(vec![0.0; n_actions]);
        FiniteMdp::new(2, n_actions, gamma, vec![1.0, 0.0], cost, transition).unwrap()
    }

    fn one_state(costs: &[f64], gamma: f64) -> FiniteMdp {
        let m = costs.len();
        FiniteMdp::new(1, m, gamma, vec![1.0], costs.to_vec(), vec![1.0; m]).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(FiniteMdp::new(1, 1, 1.0, vec![1.0], vec![0.0], vec![1.0]).is_err());
        assert!(FiniteMdp::new(1, 1, 0.5, vec![1.0], vec![-1.0], vec![1.0]).is_err());
        assert!(FiniteMdp::new(2, 1, 0.5, vec![0.5, 0.5], vec![0.0; 2], vec![0.5, 0.6, 1.0, 0.0])
            .is_err());
        assert!(FiniteMdp::new(1, 1, 0.5, vec![0.9], vec![0.0], vec![1.0]).is_err());
        assert!(PolicyMatrix::new(1, 2, vec![0.7, 0.2]).is_err());
        assert!(matches!(
            apply_p(&one_state(&[1.0], 0.5), &ValueFn::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn apply_p_examples() {
        let mdp = chain(1.0, 0.5, 2);
        assert_eq!(apply_p(&mdp, &ValueFn::zeros(2)).unwrap().as_slice(), &[0.0; 4]);
        let q = apply_p(&mdp, &ValueFn::new(vec![5.0, 7.0]).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[7.0, 7.0, 7.0, 7.0]);
        let q = apply_p(&one_state(&[1.0, 2.0], 0.5), &ValueFn::new(vec![3.0]).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn apply_policy_examples() {
        let q = QFn::new(2, 2, vec![2.0, 4.0, 0.0, 4.0]).unwrap();
        let det = PolicyMatrix::deterministic(2, &[1, 0]).unwrap();
        assert_eq!(apply_policy(&det, &q).unwrap().as_slice(), &[4.0, 0.0]);
        let uni = PolicyMatrix::uniform(2, 2);
        assert_eq!(apply_policy(&uni, &q).unwrap()[0], 3.0);
        let pi = PolicyMatrix::new(2, 2, vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        assert_eq!(apply_policy(&pi, &q).unwrap()[1], 3.0);
    }

    #[test]
    fn transition_under_policy_mixes_point_masses() {
        // two states, a0 -> state 0, a1 -> state 1, from everywhere
        let transition = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = FiniteMdp::new(2, 2, 0.9, vec![0.5, 0.5], vec![0.0; 4], transition).unwrap();
        let p = transition_under_policy(&mdp, &PolicyMatrix::uniform(2, 2)).unwrap();
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        let single = chain(1.0, 0.5, 1);
        let p = transition_under_policy(&single, &PolicyMatrix::uniform(2, 1)).unwrap();
        assert_eq!(p[(0, 1)], 1.0);
        assert_eq!(p[(1, 1)], 1.0);
    }

    #[test]
    fn resolvent_and_occupancy_small_cases() {
        let mdp = one_state(&[1.0], 0.9);
        let sigma = occupancy_resolvent(&mdp, &PolicyMatrix::uniform(1, 1)).unwrap();
        assert!((sigma[(0, 0)] - 10.0).abs() < 1e-12);

        let zero = chain(1.0, 0.0, 2);
        let pi = PolicyMatrix::uniform(2, 2);
        let sigma = occupancy_resolvent(&zero, &pi).unwrap();
        assert_eq!(sigma, DMatrix::identity(2, 2));
        assert_eq!(adjoint_occupancy(&zero, &pi, &[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);

        let d = adjoint_occupancy(&one_state(&[1.0], 0.95), &PolicyMatrix::uniform(1, 1), &[1.0])
            .unwrap();
        assert!((d[0] - 20.0).abs() < 1e-10);

        let d = adjoint_occupancy(&chain(1.0, 0.5, 1), &PolicyMatrix::uniform(2, 1), &[1.0, 0.0])
            .unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
        assert!(adjoint_occupancy(&zero, &pi, &[0.3, 0.3]).is_err());
    }

    #[test]
    fn evaluate_policy_examples() {
        let ones = FiniteMdp::new(
            2,
            2,
            0.9,
            vec![0.5, 0.5],
            vec![1.0; 4],
            vec![0.2, 0.8, 0.6, 0.4, 1.0, 0.0, 0.3, 0.7],
        )
        .unwrap();
        let pi = PolicyMatrix::new(2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        for x in evaluate_policy(&ones, &pi).unwrap().as_slice() {
            assert!((x - 10.0).abs() < 1e-10);
        }
        let v = evaluate_policy(&chain(1.0, 0.5, 1), &PolicyMatrix::uniform(2, 1)).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        let v = evaluate_policy(&chain(0.0, 0.5, 2), &PolicyMatrix::uniform(2, 2)).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn advantage_vanishes_for_trivial_cases() {
        let zero_cost = chain(0.0, 0.7, 3);
        assert_eq!(advantage(&zero_cost, &PolicyMatrix::uniform(2, 3)).unwrap().max_abs(), 0.0);
        let single = chain(2.0, 0.7, 1);
        assert!(advantage(&single, &PolicyMatrix::uniform(2, 1)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn bellman_optimal_one_state() {
        let mdp = one_state(&[1.0, 2.0], 0.5);
        let (tv, greedy) = bellman_optimal(&mdp, &ValueFn::zeros(1)).unwrap();
        assert_eq!(tv[0], 1.0);
        assert_eq!(greedy.row(0), &[1.0, 0.0]);
        // ties go to the lowest index
        let tie = one_state(&[3.0, 3.0], 0.5);
        let (_, greedy) = bellman_optimal(&tie, &ValueFn::zeros(1)).unwrap();
        assert_eq!(greedy.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn shape_cost_with_zero_and_constant_potential() {
        let mdp = chain(1.0, 0.5, 2);
        let shaped = shape_cost(&mdp, &ValueFn::zeros(2)).unwrap();
        assert_eq!(shaped.shift, 0.0);
        assert_eq!(shaped.mdp.costs(), mdp.costs());

        // (gamma - 1) k = -2 everywhere, restored by a shift of 2
        let shaped = shape_cost(&mdp, &ValueFn::constant(2, 4.0)).unwrap();
        assert!((shaped.shift - 2.0).abs() < 1e-12);
        for (a, b) in shaped.mdp.costs().iter().zip(mdp.costs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_validates() {
        let mdp = chain(1.0, 0.5, 2);
        let mut buf = Vec::new();
        mdp.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for field in ["n_states", "n_actions", "gamma", "rho", "cost", "transition"] {
            assert!(text.contains(&format!("\"{field}\"")));
        }
        assert_eq!(FiniteMdp::read_json(buf.as_slice()).unwrap(), mdp);
        let broken = text.replace("\"gamma\":0.5", "\"gamma\":1.5");
        assert!(FiniteMdp::read_json(broken.as_bytes()).is_err());
    }

    #[test]
    fn mixture_stays_on_simplex() {
        let a = PolicyMatrix::deterministic(3, &[0, 2]).unwrap();
        let b = PolicyMatrix::uniform(2, 3);
        let mix = a.mixture(&b, 0.3).unwrap();
        for row in mix.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(a.mixture(&b, 1.5).is_err());
    }
}
