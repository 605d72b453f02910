//! Linear-quadratic regulator checks: linear policies `a = -K s`, their
//! quadratic value matrices, the transition constant `kappa_P` and the
//! minimiser of a quadratic `q`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use crate::error::{dim_check, Error, Result};
use crate::verify::VerificationReport;
use crate::SimRng;

const SYM_TOL: f64 = 1e-10;

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    if (m - m.transpose()).amax() > SYM_TOL {
        return Err(Error::Contract(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// `s' = A s + B a` with stage cost `s^T Q s + a^T R a`, discounted by `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSystem {
    a_matrix: DMatrix<f64>,
    b_matrix: DMatrix<f64>,
    q_cost: DMatrix<f64>,
    r_cost: DMatrix<f64>,
    gamma: f64,
}

impl LqrSystem {
    pub fn new(
        a_matrix: DMatrix<f64>,
        b_matrix: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n = a_matrix.nrows();
        dim_check("A columns", n, a_matrix.ncols())?;
        dim_check("B rows", n, b_matrix.nrows())?;
        let m = b_matrix.ncols();
        dim_check("Q rows", n, q_cost.nrows())?;
        dim_check("R rows", m, r_cost.nrows())?;
        check_symmetric("Q", &q_cost)?;
        check_symmetric("R", &r_cost)?;
        if min_eigenvalue(&q_cost) < -SYM_TOL {
            return Err(Error::Contract("Q is not positive semi-definite".into()));
        }
        if m > 0 && r_cost.clone().cholesky().is_none() {
            return Err(Error::Contract("R is not positive definite".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Contract(format!("gamma {gamma} outside (0, 1]")));
        }
        Ok(Self { a_matrix, b_matrix, q_cost, r_cost, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b_matrix.ncols()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b_matrix
    }

    pub fn q_cost(&self) -> &DMatrix<f64> {
        &self.q_cost
    }

    pub fn r_cost(&self) -> &DMatrix<f64> {
        &self.r_cost
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `A - B K`.
    pub fn closed_loop(&self, policy: &LinearPolicy) -> Result<DMatrix<f64>> {
        dim_check("gain rows", self.n_inputs(), policy.k_gain.nrows())?;
        dim_check("gain columns", self.n_states(), policy.k_gain.ncols())?;
        Ok(&self.a_matrix - &self.b_matrix * &policy.k_gain)
    }
}

/// `a = -K s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    k_gain: DMatrix<f64>,
}

impl LinearPolicy {
    pub fn new(k_gain: DMatrix<f64>) -> Result<Self> {
        if k_gain.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("gain has non-finite entries".into()));
        }
        Ok(Self { k_gain })
    }

    pub fn zeros(n_inputs: usize, n_states: usize) -> Self {
        Self { k_gain: DMatrix::zeros(n_inputs, n_states) }
    }

    pub fn k_gain(&self) -> &DMatrix<f64> {
        &self.k_gain
    }

    pub fn action(&self, s: &DVector<f64>) -> DVector<f64> {
        -(&self.k_gain * s)
    }
}

/// Spectral radius of `sqrt(gamma) (A - B K)`.
pub fn closed_loop_spectral_radius(sys: &LqrSystem, policy: &LinearPolicy) -> Result<f64> {
    let m = sys.closed_loop(policy)? * sys.gamma.sqrt();
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues().iter().fold(0.0, |acc, z| acc.max(z.norm())))
}

/// Value matrix `V` with `v_pi(s) = s^T V s`, from
/// `V <- Q + K^T R K + gamma (A - BK)^T V (A - BK)` iterated until the
/// largest entry change is at most `horizon_tol`.
///
/// Refuses closed loops that are not spectrally stable.
pub fn evaluate_linear_policy(
    sys: &LqrSystem,
    policy: &LinearPolicy,
    horizon_tol: f64,
) -> Result<DMatrix<f64>> {
    if !(horizon_tol > 0.0) {
        return Err(Error::Contract("horizon_tol must be positive".into()));
    }
    let radius = closed_loop_spectral_radius(sys, policy)?;
    if radius >= 1.0 {
        return Err(Error::Contract(format!("closed loop is not stable (radius {radius})")));
    }
    let m = sys.closed_loop(policy)?;
    let k = &policy.k_gain;
    let stage = &sys.q_cost + k.transpose() * &sys.r_cost * k;
    let mut v = stage.clone();
    for _ in 0..10_000_000 {
        let mut next = &stage + m.transpose() * &v * &m * sys.gamma;
        next = (&next + next.transpose()) * 0.5;
        let change = (&next - &v).amax();
        v = next;
        if change <= horizon_tol {
            return Ok(v);
        }
    }
    Err(Error::Numerical("value recursion did not settle".into()))
}

/// `|V - (Q + K^T R K) - gamma (A - BK)^T V (A - BK)|_max`.
pub fn lyapunov_residual(sys: &LqrSystem, policy: &LinearPolicy, v: &DMatrix<f64>) -> Result<f64> {
    let m = sys.closed_loop(policy)?;
    let k = &policy.k_gain;
    let rhs = &sys.q_cost + k.transpose() * &sys.r_cost * k + m.transpose() * v * &m * sys.gamma;
    Ok((v - rhs).amax())
}

/// `2 (|A|_2^2 + |B|_2^2)`.
pub fn lqr_kappa_p(sys: &LqrSystem) -> f64 {
    2.0 * (spectral_norm(&sys.a_matrix).powi(2) + spectral_norm(&sys.b_matrix).powi(2))
}

/// `(A s + B a)^T Q (A s + B a) / (1 + s^T s + a^T a)`.
pub fn kappa_ratio(sys: &LqrSystem, q: &DMatrix<f64>, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let next = &sys.a_matrix * s + &sys.b_matrix * a;
    next.dot(&(q * &next)) / (1.0 + s.dot(s) + a.dot(a))
}

/// `q(s, a) = s^T Q s + a^T R a + 2 lambda s^T A^T Q B a` with `R` the
/// system's input cost.
pub fn quadratic_q(
    sys: &LqrSystem,
    q_matrix: &DMatrix<f64>,
    lambda: f64,
    s: &DVector<f64>,
    a: &DVector<f64>,
) -> f64 {
    let cross = sys.a_matrix.transpose() * q_matrix * &sys.b_matrix * lambda;
    s.dot(&(q_matrix * s)) + a.dot(&(&sys.r_cost * a)) + 2.0 * s.dot(&(cross * a))
}

/// Gradient of [`quadratic_q`] in `a`: `2 R a + 2 lambda B^T Q A s`.
pub fn quadratic_q_gradient(
    sys: &LqrSystem,
    q_matrix: &DMatrix<f64>,
    lambda: f64,
    s: &DVector<f64>,
    a: &DVector<f64>,
) -> DVector<f64> {
    (&sys.r_cost * a) * 2.0 + (sys.b_matrix.transpose() * q_matrix * &sys.a_matrix * s) * (2.0 * lambda)
}

/// `K = lambda R^-1 B^T Q A`, the gain of `argmin_a q(s, a)`.
pub fn completing_square_minimizer(
    sys: &LqrSystem,
    q_matrix: &DMatrix<f64>,
    lambda: f64,
) -> Result<LinearPolicy> {
    dim_check("q matrix", sys.n_states(), q_matrix.nrows())?;
    check_symmetric("q matrix", q_matrix)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
    }
    let rhs = sys.b_matrix.transpose() * q_matrix * &sys.a_matrix * lambda;
    let k = sys
        .r_cost
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("R is not positive definite".into()))?
        .solve(&rhs);
    LinearPolicy::new(k)
}

/// Matrix of `s -> q(s, -K s)` for `q(s, a) = s^T Q s + a^T R a + 2 s^T N a`:
/// `Q - N K - K^T N^T + K^T R K`.
pub fn composed_quadratic(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> DMatrix<f64> {
    q - n * k - k.transpose() * n.transpose() + k.transpose() * r * k
}

/// Smallest eigenvalue of the Schur complement `Q - N R^-1 N^T`.
pub fn schur_min_eigenvalue(q: &DMatrix<f64>, r: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64> {
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("R is not positive definite".into()))?
        .inverse();
    Ok(min_eigenvalue(&(q - n * r_inv * n.transpose())))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_vector(n: usize, scale: f64, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Random PSD matrix with unit spectral norm.
fn random_unit_psd(n: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let c = random_matrix(n, n, rng);
    let q = &c * c.transpose();
    let norm = spectral_norm(&q);
    if norm > 0.0 {
        q / norm
    } else {
        DMatrix::identity(n, n)
    }
}

/// Random system with at most 4 states and 3 inputs, `gamma = 0.9`.
pub fn random_system(seed: u64) -> Result<LqrSystem> {
    let mut rng = SimRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=3);
    let a = random_matrix(n, n, &mut rng);
    let b = random_matrix(n, m, &mut rng);
    let cq = random_matrix(n, n, &mut rng);
    let cr = random_matrix(m, m, &mut rng);
    let r = &cr * cr.transpose() + DMatrix::identity(m, m) * 0.5;
    LqrSystem::new(a, b, &cq * cq.transpose(), r, 0.9)
}

/// Minimises `q(s, .)` by gradient descent with step `1 / (2 lambda_max(R))`.
pub fn descent_minimizer(
    sys: &LqrSystem,
    q_matrix: &DMatrix<f64>,
    lambda: f64,
    s: &DVector<f64>,
) -> DVector<f64> {
    let step = 0.5 / sys.r_cost.symmetric_eigenvalues().max();
    let mut a = DVector::zeros(sys.n_inputs());
    for _ in 0..1_000_000 {
        let g = quadratic_q_gradient(sys, q_matrix, lambda, s, &a);
        if g.amax() <= 1e-13 {
            break;
        }
        a -= g * step;
    }
    a
}

pub const KAPPA_SAMPLES: usize = 10_000;
pub const KAPPA_Q_DRAWS: usize = 1_000;

/// Largest sampled ratio `(A s + B a)^T Q (A s + B a) / w_K(s, a)` over
/// [`KAPPA_SAMPLES`] draws of `(s, a)`, cycling through [`KAPPA_Q_DRAWS`]
/// random PSD `Q` with `|Q|_2 = 1`.
pub fn sampled_kappa_lower_bound(sys: &LqrSystem, rng: &mut SimRng) -> f64 {
    let qs: Vec<DMatrix<f64>> =
        (0..KAPPA_Q_DRAWS).map(|_| random_unit_psd(sys.n_states(), rng)).collect();
    let mut best: f64 = 0.0;
    for i in 0..KAPPA_SAMPLES {
        let scale = 10f64.powf(rng.gen_range(-1.0..3.0));
        let s = random_vector(sys.n_states(), scale, rng);
        let a = random_vector(sys.n_inputs(), scale, rng);
        best = best.max(kappa_ratio(sys, &qs[i % KAPPA_Q_DRAWS], &s, &a));
    }
    best
}

/// LQR checks on `n_systems` seeded systems: `kappa_P` domination, the
/// completing-the-square minimiser against gradient descent, the Lyapunov
/// fixed point of the minimiser's gain when it is stable, quadratic
/// closure under `a = -K s`, and the scalar value `4/3`.
pub fn run_lqr_suite(master_seed: u64, n_systems: usize) -> Result<Vec<VerificationReport>> {
    let mut kappa = Vec::new();
    let mut minimizer = Vec::new();
    let mut lyapunov = Vec::new();
    let mut closure = Vec::new();
    for i in 0..n_systems as u64 {
        let seed = master_seed.wrapping_add(i);
        let sys = random_system(seed)?;
        let mut rng = SimRng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);

        let lower = sampled_kappa_lower_bound(&sys, &mut rng);
        kappa.push(
            VerificationReport::new("lqr_kappa_p", (lower - lqr_kappa_p(&sys)).max(0.0), 1e-12)
                .with_seed(seed),
        );

        let q_matrix = random_unit_psd(sys.n_states(), &mut rng);
        let lambda = rng.gen_range(0.0..=1.0);
        let policy = completing_square_minimizer(&sys, &q_matrix, lambda)?;
        let mut err: f64 = 0.0;
        for _ in 0..100 {
            let s = random_vector(sys.n_states(), 1.0, &mut rng);
            let oracle = descent_minimizer(&sys, &q_matrix, lambda, &s);
            err = err.max((policy.action(&s) - oracle).amax());
        }
        minimizer.push(VerificationReport::new("lqr_minimizer", err, 1e-6).with_seed(seed));

        if closed_loop_spectral_radius(&sys, &policy)? < 0.95 {
            let v = evaluate_linear_policy(&sys, &policy, 1e-13)?;
            let res = lyapunov_residual(&sys, &policy, &v)?.max((-min_eigenvalue(&v)).max(0.0));
            lyapunov.push(VerificationReport::new("lqr_lyapunov", res, 1e-8).with_seed(seed));
        }

        // a q whose block matrix [Q N; N^T R] is PSD stays PSD after a = -K s
        let n_cross = random_matrix(sys.n_states(), sys.n_inputs(), &mut rng);
        let r_q = n_cross.transpose() * &n_cross + DMatrix::identity(sys.n_inputs(), sys.n_inputs()) * 0.1;
        let r_inv = r_q.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| r_q.clone());
        let slack = random_unit_psd(sys.n_states(), &mut rng);
        let q_q = &n_cross * r_inv * n_cross.transpose() + slack;
        let q_q = (&q_q + q_q.transpose()) * 0.5;
        let composed = composed_quadratic(&q_q, &r_q, &n_cross, policy.k_gain());
        let violation = (-min_eigenvalue(&composed)).max(0.0);
        let schur = schur_min_eigenvalue(&q_q, &r_q, &n_cross)?;
        closure.push(
            VerificationReport::new("lqr_quadratic_closure", violation, 1e-10)
                .with_seed(seed)
                .with_detail("schur_min_eig", schur),
        );
    }

    let scalar = LqrSystem::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        1.0,
    )?;
    let v = evaluate_linear_policy(&scalar, &LinearPolicy::zeros(1, 1), 1e-15)?;
    let scalar_report = VerificationReport::new("lqr_scalar_value", (v[(0, 0)] - 4.0 / 3.0).abs(), 1e-10);

    let mut out: Vec<VerificationReport> = [kappa, minimizer, lyapunov, closure]
        .iter()
        .filter_map(|r| VerificationReport::aggregate(r))
        .collect();
    out.push(scalar_report);
    Ok(out)
}
