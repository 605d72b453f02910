//! GARNET instances, trajectory simulation and Monte-Carlo estimators.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, FiniteMdp, PolicyMatrix, QFn};
use crate::SimRng;

fn default_cost_range() -> [f64; 2] {
    [0.0, 1.0]
}

/// Parameters of a random GARNET MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of distinct successor states of every state-action pair.
    pub branching: usize,
    pub gamma: f64,
    #[serde(default = "default_cost_range")]
    pub cost_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl Default for GarnetSpec {
    /// The full-size benchmark: 1000 states, 200 actions, branching 20.
    fn default() -> Self {
        Self::new(1000, 200, 20, 0.95, 0)
    }
}

impl GarnetSpec {
    pub fn new(n_states: usize, n_actions: usize, branching: usize, gamma: f64, seed: u64) -> Self {
        Self { n_states, n_actions, branching, gamma, cost_range: default_cost_range(), seed }
    }

    /// 100 states, 20 actions, branching 5.
    pub fn desk(seed: u64) -> Self {
        Self::new(100, 20, 5, 0.95, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Contract("GARNET needs at least one state and action".into()));
        }
        if self.branching == 0 || self.branching > self.n_states {
            return Err(Error::Contract(format!(
                "branching {} must lie in [1, {}]",
                self.branching, self.n_states
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Contract(format!("discount {} outside [0, 1)", self.gamma)));
        }
        let [low, high] = self.cost_range;
        if !(low >= 0.0 && high >= low && high.is_finite()) {
            return Err(Error::Contract(format!("invalid cost range [{low}, {high}]")));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn generate(&self) -> Result<FiniteMdp> {
        generate_garnet(self)
    }
}

/// Draws a GARNET MDP.
///
/// Each state-action pair gets `branching` distinct successors chosen
/// uniformly without replacement; their probabilities are the gaps between
/// sorted uniform variates (a flat Dirichlet on the support). Costs are
/// uniform on `cost_range` and the initial distribution is uniform.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    let (n, m, b) = (spec.n_states, spec.n_actions, spec.branching);
    let [low, high] = spec.cost_range;
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let mut transition = vec![0.0; n * m * n];
    let mut cost = vec![0.0; n * m];
    let mut cuts = Vec::with_capacity(b + 1);
    for sa in 0..n * m {
        let support = index::sample(&mut rng, n, b);
        loop {
            cuts.clear();
            cuts.push(0.0);
            cuts.extend((1..b).map(|_| rng.gen::<f64>()));
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            if cuts.windows(2).all(|w| w[1] > w[0]) {
                break;
            }
        }
        let row = &mut transition[sa * n..(sa + 1) * n];
        for (next, w) in support.iter().zip(cuts.windows(2)) {
            row[next] = w[1] - w[0];
        }
        cost[sa] = if high > low { rng.gen_range(low..high) } else { low };
    }
    FiniteMdp::new(n, m, spec.gamma, vec![1.0 / n as f64; n], cost, transition)
}

/// A policy with strictly positive rows drawn from the flat Dirichlet.
pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> PolicyMatrix {
    let probs = (0..n_states * n_actions)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-12)
        .collect();
    PolicyMatrix::from_rows_normalized(n_states, n_actions, probs)
}

/// Cumulative weights of a discrete distribution over its positive entries.
#[derive(Debug, Clone)]
struct Categorical {
    outcomes: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Categorical {
    fn new(weights: &[f64]) -> Self {
        let mut outcomes = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                outcomes.push(i);
                cumulative.push(acc);
            }
        }
        Self { outcomes, cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("distribution has positive mass");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.outcomes[i.min(self.outcomes.len() - 1)]
    }
}

/// Sampling tables for one MDP and one policy.
struct Sampler<'a> {
    mdp: &'a FiniteMdp,
    initial: Categorical,
    kernel: Vec<Categorical>,
    policy: Vec<Categorical>,
}

impl<'a> Sampler<'a> {
    fn new(mdp: &'a FiniteMdp, pi: &PolicyMatrix) -> Result<Self> {
        mdp::check_policy_shape(mdp, pi)?;
        let n = mdp.n_states();
        Ok(Self {
            mdp,
            initial: Categorical::new(mdp.rho()),
            kernel: mdp.transitions().chunks_exact(n).map(Categorical::new).collect(),
            policy: pi.rows().map(Categorical::new).collect(),
        })
    }

    fn initial_state(&self, rng: &mut impl Rng) -> usize {
        self.initial.sample(rng)
    }

    fn action(&self, s: usize, rng: &mut impl Rng) -> usize {
        self.policy[s].sample(rng)
    }

    fn next_state(&self, s: usize, a: usize, rng: &mut impl Rng) -> usize {
        self.kernel[s * self.mdp.n_actions() + a].sample(rng)
    }

    fn rollout(&self, horizon: usize, rng: &mut impl Rng) -> Trajectory {
        let mut traj = Trajectory {
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            costs: Vec::with_capacity(horizon),
        };
        let mut s = self.initial_state(rng);
        for t in 0..horizon {
            let a = self.action(s, rng);
            traj.states.push(s);
            traj.actions.push(a);
            traj.costs.push(self.mdp.cost(s, a));
            if t + 1 < horizon {
                s = self.next_state(s, a, rng);
            }
        }
        traj
    }
}

/// States, actions and incurred costs of one simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulates `horizon` steps from `s_0 ~ rho` under `pi`.
pub fn simulate(
    mdp: &FiniteMdp,
    pi: &PolicyMatrix,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Contract("horizon must be at least 1".into()));
    }
    Ok(Sampler::new(mdp, pi)?.rollout(horizon, rng))
}

/// Every-visit Monte-Carlo estimate of the advantage function.
#[derive(Debug, Clone)]
pub struct McEstimate {
    /// `q_hat - v_hat` on visited pairs, zero elsewhere.
    pub advantage: QFn,
    /// Mean truncated discounted return from each visited pair, zero elsewhere.
    pub q_hat: QFn,
    /// Visit count of every state-action pair, row-major.
    pub visits: Vec<u64>,
    /// Environment steps consumed.
    pub samples: u64,
}

impl McEstimate {
    pub fn visited(&self, s: usize, a: usize) -> bool {
        self.visits[s * self.advantage.n_actions() + a] > 0
    }

    /// Visit frequency of each state rescaled to total mass `1 / (1 - gamma)`.
    pub fn occupancy_estimate(&self, gamma: f64) -> Vec<f64> {
        let m = self.advantage.n_actions();
        let total = self.samples.max(1) as f64;
        self.visits
            .chunks_exact(m)
            .map(|row| row.iter().sum::<u64>() as f64 / total / (1.0 - gamma))
            .collect()
    }
}

/// Every-visit Monte-Carlo advantage estimate from `episodes` independent
/// episodes of `steps_per_episode` steps each.
///
/// Returns are truncated at the end of each episode. `v_hat(s)` averages
/// `q_hat(s, .)` under `pi` restricted to the visited actions and
/// renormalized, so `sum_a pi(a|s) A_hat(s, a) = 0` at every visited state.
pub fn estimate_advantage_mc(
    mdp: &FiniteMdp,
    pi: &PolicyMatrix,
    episodes: usize,
    steps_per_episode: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate> {
    if episodes == 0 || steps_per_episode == 0 {
        return Err(Error::Contract("need at least one episode of one step".into()));
    }
    let sampler = Sampler::new(mdp, pi)?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut sums = vec![0.0; n * m];
    let mut visits = vec![0u64; n * m];
    let mut returns = vec![0.0; steps_per_episode];
    for _ in 0..episodes {
        let traj = sampler.rollout(steps_per_episode, rng);
        let mut g = 0.0;
        for t in (0..traj.len()).rev() {
            g = traj.costs[t] + gamma * g;
            returns[t] = g;
        }
        for t in 0..traj.len() {
            let sa = traj.states[t] * m + traj.actions[t];
            sums[sa] += returns[t];
            visits[sa] += 1;
        }
    }
    let q_hat: Vec<f64> = sums
        .iter()
        .zip(&visits)
        .map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 })
        .collect();
    let mut adv = vec![0.0; n * m];
    for s in 0..n {
        let (mut mass, mut acc) = (0.0, 0.0);
        for a in 0..m {
            if visits[s * m + a] > 0 {
                mass += pi.prob(s, a);
                acc += pi.prob(s, a) * q_hat[s * m + a];
            }
        }
        if mass <= 0.0 {
            continue;
        }
        let v_hat = acc / mass;
        for a in 0..m {
            if visits[s * m + a] > 0 {
                adv[s * m + a] = q_hat[s * m + a] - v_hat;
            }
        }
    }
    Ok(McEstimate {
        advantage: QFn::from_vec(n, m, adv),
        q_hat: QFn::from_vec(n, m, q_hat),
        visits,
        samples: (episodes * steps_per_episode) as u64,
    })
}

/// Sample mean and standard error of the geometric-horizon estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
}

const ROLLOUTS_PER_STREAM: usize = 8192;

/// Unbiased estimate of `<pi' q, sigma_{pi_k}^* rho>`.
///
/// Each rollout draws `N` with `P(N = n) = (1 - gamma) gamma^n`, walks
/// `s_0 ~ rho`, `s_{i+1} ~ P_{pi_k}(.|s_i)` and sums `[pi' q](s_i)` for
/// `i = 0..=N`. Since `P(N >= t) = gamma^t`, the expected sum is
/// `sum_t gamma^t E[pi' q](s_t)`, the unnormalized pairing. Rollouts run in
/// parallel on independent ChaCha streams seeded from `rng`.
pub fn geometric_horizon_estimate(
    mdp: &FiniteMdp,
    pi_k: &PolicyMatrix,
    q: &QFn,
    pi_prime: &PolicyMatrix,
    n_rollouts: usize,
    rng: &mut impl Rng,
) -> Result<GeometricEstimate> {
    if n_rollouts == 0 {
        return Err(Error::Contract("need at least one rollout".into()));
    }
    mdp::check_q_shape(mdp, q)?;
    mdp::check_policy_shape(mdp, pi_prime)?;
    let f = mdp::apply_policy(pi_prime, q)?;
    let sampler = Sampler::new(mdp, pi_k)?;
    let gamma = mdp.gamma();
    let base_seed: u64 = rng.gen();
    let n_streams = n_rollouts.div_ceil(ROLLOUTS_PER_STREAM);
    let partials: Vec<(f64, f64)> = (0..n_streams)
        .into_par_iter()
        .map(|stream| {
            let mut rng = SimRng::seed_from_u64(base_seed);
            rng.set_stream(stream as u64);
            let count = ROLLOUTS_PER_STREAM.min(n_rollouts - stream * ROLLOUTS_PER_STREAM);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                let mut s = sampler.initial_state(&mut rng);
                let mut total = f[s];
                while rng.gen::<f64>() < gamma {
                    let a = sampler.action(s, &mut rng);
                    s = sampler.next_state(s, a, &mut rng);
                    total += f[s];
                }
                sum += total;
                sum_sq += total * total;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partials.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let k = n_rollouts as f64;
    let mean = sum / k;
    let var = if n_rollouts > 1 { ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0) } else { 0.0 };
    Ok(GeometricEstimate { mean, std_error: (var / k).sqrt(), rollouts: n_rollouts })
}
