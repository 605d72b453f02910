//! Action-space MMD, the weighted policy metric, and majorization constants.
//!
//! With a symmetric positive-definite action kernel `R`, the squared MMD
//! between two distributions on the actions is the quadratic form
//! `1/2 (p1 - p2)^T R (p1 - p2)`. Its dual pairing gives, for any zero-sum
//! `d` and any action function `h`,
//!
//! ```text
//! |d^T h| <= sqrt(d^T R d) * ||h||_{R^-1} = sqrt(2 * mmd^2) * ||h||_{R^-1}
//! ```
//!
//! which is what every bound in this module is built on. The Minkowski
//! functional of a q-function is `max_s w(s) * sqrt(2) * ||q(s, .)||_{R^-1}`.

use nalgebra::DMatrix;

use crate::error::{dim_check, Error, Result};
use crate::mdp::{self, FiniteMdp, PolicyMatrix, QFn};

/// The positive-definite action kernel `R` and the state weight `w_S >= 1`.
#[derive(Debug, Clone)]
pub struct KernelMetric {
    r_matrix: DMatrix<f64>,
    weight_s: Vec<f64>,
    r_inv: DMatrix<f64>,
    /// `R^{-1/2}`, symmetric.
    r_inv_sqrt: DMatrix<f64>,
    /// Largest eigenvalue of `R^{-1}`.
    r_inv_max_eig: f64,
    /// Largest eigenvalue of `R`.
    r_max_eig: f64,
    scaled_identity: bool,
}

impl KernelMetric {
    pub fn new(r_matrix: DMatrix<f64>, weight_s: Vec<f64>) -> Result<Self> {
        let m = r_matrix.nrows();
        if m == 0 || r_matrix.ncols() != m {
            return Err(Error::Dimension(format!(
                "kernel matrix must be square and non-empty, got {}x{}",
                r_matrix.nrows(),
                r_matrix.ncols()
            )));
        }
        if r_matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("kernel matrix has non-finite entries".into()));
        }
        for i in 0..m {
            for j in 0..i {
                if (r_matrix[(i, j)] - r_matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Contract(format!("kernel matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        if r_matrix.clone().cholesky().is_none() {
            return Err(Error::Contract("kernel matrix is not positive definite".into()));
        }
        if weight_s.is_empty() || weight_s.iter().any(|w| !w.is_finite() || *w < 1.0) {
            return Err(Error::Contract("state weights must be finite and >= 1".into()));
        }
        let eig = r_matrix.clone().symmetric_eigen();
        let inv_sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let r_inv_sqrt = &eig.eigenvectors * inv_sqrt_diag * eig.eigenvectors.transpose();
        let r_inv = &r_inv_sqrt * &r_inv_sqrt;
        let r_min_eig = eig.eigenvalues.min();
        let r_max_eig = eig.eigenvalues.max();
        let diag = r_matrix[(0, 0)];
        let scaled_identity = (0..m).all(|i| {
            (0..m).all(|j| r_matrix[(i, j)] == if i == j { diag } else { 0.0 })
        });
        Ok(Self {
            r_matrix,
            weight_s,
            r_inv,
            r_inv_sqrt,
            r_inv_max_eig: 1.0 / r_min_eig,
            r_max_eig,
            scaled_identity,
        })
    }

    /// `R = I`, `w_S = 1`.
    pub fn identity(n_states: usize, n_actions: usize) -> Self {
        Self::new(DMatrix::identity(n_actions, n_actions), vec![1.0; n_states])
            .expect("identity kernel is valid")
    }

    pub fn n_actions(&self) -> usize {
        self.r_matrix.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.weight_s.len()
    }

    pub fn r_matrix(&self) -> &DMatrix<f64> {
        &self.r_matrix
    }

    pub fn weight_s(&self) -> &[f64] {
        &self.weight_s
    }

    /// Largest eigenvalue of `R`.
    pub fn r_max_eigenvalue(&self) -> f64 {
        self.r_max_eig
    }

    /// Largest absolute entry of `R`.
    pub fn r_max_abs_entry(&self) -> f64 {
        self.r_matrix.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `R_a^T x` for every action `a`.
    pub(crate) fn r_times(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_actions();
        (0..m).map(|a| (0..m).map(|b| self.r_matrix[(a, b)] * x[b]).sum()).collect()
    }

    fn quad(&self, mat: &DMatrix<f64>, x: &[f64]) -> f64 {
        let m = x.len();
        let mut acc = 0.0;
        for i in 0..m {
            if x[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..m {
                row += mat[(i, j)] * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `||h||_{R^{-1}} = sqrt(h^T R^{-1} h)`.
    pub fn dual_norm(&self, h: &[f64]) -> f64 {
        self.quad(&self.r_inv, h).max(0.0).sqrt()
    }

    pub(crate) fn check_dims(&self, mdp: &FiniteMdp) -> Result<()> {
        dim_check("metric actions", mdp.n_actions(), self.n_actions())?;
        dim_check("metric states", mdp.n_states(), self.n_states())
    }

    /// `1/2 (p1 - p2)^T R (p1 - p2)`.
    pub fn mmd_squared(&self, p1: &[f64], p2: &[f64]) -> Result<f64> {
        dim_check("first distribution", self.n_actions(), p1.len())?;
        dim_check("second distribution", self.n_actions(), p2.len())?;
        Ok(self.mmd_squared_unchecked(p1, p2))
    }

    pub(crate) fn mmd_squared_unchecked(&self, p1: &[f64], p2: &[f64]) -> f64 {
        let d: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| a - b).collect();
        (0.5 * self.quad(&self.r_matrix, &d)).max(0.0)
    }

    /// Squared MMD between the two policies, state by state.
    pub fn state_mmd_squared(&self, pi1: &PolicyMatrix, pi2: &PolicyMatrix) -> Result<Vec<f64>> {
        pi1.check_same_shape(pi2)?;
        dim_check("policy actions", self.n_actions(), pi1.n_actions())?;
        dim_check("policy states", self.n_states(), pi1.n_states())?;
        Ok(pi1.rows().zip(pi2.rows()).map(|(a, b)| self.mmd_squared_unchecked(a, b)).collect())
    }

    /// `sup_s MMD(pi1(s), pi2(s)) / w_S(s)`.
    pub fn policy_ipm(&self, pi1: &PolicyMatrix, pi2: &PolicyMatrix) -> Result<f64> {
        Ok(self
            .state_mmd_squared(pi1, pi2)?
            .iter()
            .zip(&self.weight_s)
            .fold(0.0, |m, (d2, w)| m.max(d2.sqrt() / w)))
    }

    /// Minkowski functional of `q`: `max_s w(s) sqrt(2) ||q(s, .)||_{R^-1}`.
    ///
    /// Satisfies `|[(pi' - pi) q](s)| <= policy_ipm(pi, pi') * rkhs_norm(q)`.
    pub fn rkhs_norm(&self, q: &QFn) -> Result<f64> {
        dim_check("q-function actions", self.n_actions(), q.n_actions())?;
        dim_check("q-function states", self.n_states(), q.n_states())?;
        Ok(q.rows()
            .zip(&self.weight_s)
            .fold(0.0, |m, (row, w)| m.max(w * std::f64::consts::SQRT_2 * self.dual_norm(row))))
    }

    /// Per-state upper bounds on `sup_{|u|_inf <= 1} ||[P u](s, .)||_{R^-1}`.
    pub fn transition_gain_bounds(&self, mdp: &FiniteMdp) -> Result<Vec<f64>> {
        self.check_dims(mdp)?;
        let n = mdp.n_states();
        let m = mdp.n_actions();
        // Rows of P are stochastic, so ||P_s u||_2 <= sqrt(m) |u|_inf; the
        // bound is attained at u = 1 when R is a multiple of the identity.
        let spectral = (m as f64 * self.r_inv_max_eig).sqrt();
        if self.scaled_identity {
            return Ok(vec![spectral; n]);
        }
        let mut bounds = Vec::with_capacity(n);
        let mut row_l1 = vec![0.0; n];
        for s in 0..n {
            // rows of R^{-1/2} P_s, each bounded in l1
            let mut sum_sq = 0.0;
            for i in 0..m {
                row_l1.iter_mut().for_each(|x| *x = 0.0);
                for a in 0..m {
                    let w = self.r_inv_sqrt[(i, a)];
                    if w == 0.0 {
                        continue;
                    }
                    for (acc, p) in row_l1.iter_mut().zip(mdp.transition_row(s, a)) {
                        *acc += w * p;
                    }
                }
                let l1: f64 = row_l1.iter().map(|x| x.abs()).sum();
                sum_sq += l1 * l1;
            }
            bounds.push(spectral.min(sum_sq.sqrt()));
        }
        Ok(bounds)
    }

    /// Per-state weights for the per-state MM surrogate that provably
    /// majorizes the second-order policy-difference term.
    ///
    /// For `pi'` with `p_s = pi'(s)`, the exact identity
    /// `J(pi') - J(pi) = sum_s d(s) <p_s, A(s, .)> + E2` holds with
    /// `E2 = gamma <Delta P sigma_pi' Delta q, d>`, and
    ///
    /// ```text
    /// E2 <= sum_s d(s) beta_s mmd^2(pi(s), p_s)
    /// ```
    ///
    /// with `beta_s = gamma/(1-gamma) (t K_s^2 + D ||A_s||^2 / (t d(s)))`,
    /// `K_s` from [`Self::transition_gain_bounds`], `D = sum_s d(s)` and `t`
    /// chosen to minimise `sum_s beta_s`. States with `d(s) = 0` get an
    /// infinite weight: they must not move.
    pub fn certified_state_betas(
        &self,
        mdp: &FiniteMdp,
        advantage: &QFn,
        occupancy: &[f64],
    ) -> Result<Vec<f64>> {
        mdp::check_q_shape(mdp, advantage)?;
        dim_check("occupancy", mdp.n_states(), occupancy.len())?;
        let gains = self.transition_gain_bounds(mdp)?;
        let gamma = mdp.gamma();
        let total: f64 = occupancy.iter().sum();
        let adv_sq: Vec<f64> = advantage.rows().map(|r| self.dual_norm(r).powi(2)).collect();

        let mut num = 0.0;
        let mut den = 0.0;
        for s in 0..mdp.n_states() {
            if occupancy[s] > 0.0 {
                num += total * adv_sq[s] / occupancy[s];
            }
            den += gains[s] * gains[s];
        }
        let t = if num > 0.0 && den > 0.0 { (num / den).sqrt() } else { 1.0 };
        let scale = gamma / (1.0 - gamma);
        Ok((0..mdp.n_states())
            .map(|s| {
                if occupancy[s] <= 0.0 {
                    f64::INFINITY
                } else {
                    scale * (t * gains[s] * gains[s] + total * adv_sq[s] / (t * occupancy[s]))
                }
            })
            .collect())
    }
}

/// Upper bound on `kappa_P`, the smallest constant with
/// `rkhs_norm(P v) <= kappa_P |v|_inf` for every `v`.
///
/// Uses unit state weights; it is exact when `R` is a multiple of the
/// identity.
pub fn kappa_p_finite(mdp: &FiniteMdp, metric: &KernelMetric) -> Result<f64> {
    let gains = metric.transition_gain_bounds(mdp)?;
    let max_w = metric.weight_s.iter().copied().fold(1.0, f64::max);
    let worst = gains.iter().copied().fold(0.0, f64::max);
    Ok(std::f64::consts::SQRT_2 * max_w * worst)
}

/// Global majorization constant `beta(q, pi') = kappa_P ||sigma_pi'||_inf rkhs_norm(q)`.
///
/// Passing the advantage `A_pi` for `q` is valid and tighter, because
/// `(pi' - pi) q_pi = (pi' - pi) A_pi`.
pub fn certified_beta(
    mdp: &FiniteMdp,
    metric: &KernelMetric,
    q: &QFn,
    pi_prime: &PolicyMatrix,
) -> Result<f64> {
    let sigma = mdp::occupancy_resolvent(mdp, pi_prime)?;
    let sigma_norm = sigma
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(kappa_p_finite(mdp, metric)? * sigma_norm * metric.rkhs_norm(q)?)
}
