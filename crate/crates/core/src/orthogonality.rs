//! Mass-orthogonality coupling between the per-mode Gaussian processes.
//!
//! The joint objective is `J = lambda * P + sum_j NLML_j` where
//! `P = ||Phi~^T M Phi~ - I||_F^2` is evaluated on the mass-normalized
//! posterior means over the floors above the base. Its gradient is chained
//! back to each mode's `(ln gamma, ln beta)` one mode block at a time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{
    cross_covariance, factorize, gradient_from_factor, log_beta_derivative, nlml_value, nlml_with_gradient,
    GpDataset, HyperBounds, KernelHyper,
};

/// Objective value reported when any mode cannot be evaluated.
pub const JOINT_SENTINEL: f64 = 1e15;

const MODAL_MASS_FLOOR: f64 = 1e-300;

fn modal_mass(mu: &DVector<f64>, mass: &DMatrix<f64>) -> f64 {
    mu.dot(&(mass * mu))
}

/// `mu / sqrt(mu^T M mu)`.
pub fn mass_normalize(mu: &DVector<f64>, mass: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = modal_mass(mu, mass);
    if !(m > MODAL_MASS_FLOOR) {
        return Err(Error::CollapsedMean { modal_mass: m });
    }
    Ok(mu / m.sqrt())
}

fn orthogonality_residual(phi: &DMatrix<f64>, mass: &DMatrix<f64>) -> DMatrix<f64> {
    let n_m = phi.ncols();
    phi.transpose() * mass * phi - DMatrix::identity(n_m, n_m)
}

/// Squared Frobenius norm of `Phi^T M Phi - I`.
pub fn penalty(phi: &DMatrix<f64>, mass: &DMatrix<f64>) -> f64 {
    orthogonality_residual(phi, mass).norm_squared()
}

/// `dP/dPhi = 4 M Phi (Phi^T M Phi - I)`.
pub fn penalty_gradient_modes(phi: &DMatrix<f64>, mass: &DMatrix<f64>) -> DMatrix<f64> {
    mass * phi * orthogonality_residual(phi, mass) * 4.0
}

/// Jacobian of [`mass_normalize`]:
/// `(I - mu mu^T M / (mu^T M mu)) / sqrt(mu^T M mu)`.
pub fn normalization_jacobian(mu: &DVector<f64>, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = modal_mass(mu, mass);
    if !(m > MODAL_MASS_FLOOR) {
        return Err(Error::CollapsedMean { modal_mass: m });
    }
    let n = mu.len();
    let mmu = mass * mu;
    Ok((DMatrix::identity(n, n) - mu * mmu.transpose() / m) / m.sqrt())
}

/// Matrix-free product of the normalization Jacobian with `v`.
fn apply_normalization_jacobian(
    mu: &DVector<f64>,
    m_mu: &DVector<f64>,
    modal_mass: f64,
    v: &DVector<f64>,
) -> DVector<f64> {
    (v - mu * (m_mu.dot(v) / modal_mass)) / modal_mass.sqrt()
}

/// Derivatives of the posterior mean at `xq` with respect to `ln gamma` and
/// `ln beta`, in physical units.
pub fn posterior_mean_jacobian(
    data: &GpDataset,
    hyper: &KernelHyper,
    xq: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let fac = factorize(data, hyper)?;
    Ok(mean_jacobian_from_factor(data, hyper, xq, &fac, &cross_covariance(data.x_obs.as_slice(), xq, hyper)))
}

fn mean_jacobian_from_factor(
    data: &GpDataset,
    hyper: &KernelHyper,
    xq: &[f64],
    fac: &crate::gp::Factorized,
    k: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let x = data.x_obs.as_slice();
    let d_alpha = data.noise_variance().component_mul(&fac.alpha);
    let d_gamma = k.tr_mul(&fac.chol.solve(&d_alpha)) * (2.0 * data.scale);

    let beta = hyper.beta();
    let dk = log_beta_derivative(k, x, xq, beta);
    let dc = log_beta_derivative(&fac.cov, x, x, beta);
    let inner = fac.chol.solve(&(&dc * &fac.alpha));
    let d_beta = (dk.tr_mul(&fac.alpha) - k.tr_mul(&inner)) * data.scale;
    (d_gamma, d_beta)
}

/// Per-mode data and hyperparameters together with the mass matrix and the
/// penalty weight.
#[derive(Debug, Clone)]
pub struct ModeBank {
    pub datasets: Vec<GpDataset>,
    pub hypers: Vec<KernelHyper>,
    /// Normalized heights of the floors above the base, `i / N` for `i = 1..=N`.
    pub query_heights: Vec<f64>,
    pub mass: DMatrix<f64>,
    pub lambda: f64,
}

impl ModeBank {
    pub fn new(
        datasets: Vec<GpDataset>,
        mass: DMatrix<f64>,
        lambda: f64,
        initial: KernelHyper,
    ) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::DegenerateData("mode bank needs at least one mode".into()));
        }
        let n = mass.nrows();
        if mass.ncols() != n {
            return Err(Error::DimensionMismatch {
                field: "mass matrix columns".into(),
                expected: n,
                found: mass.ncols(),
            });
        }
        if (&mass - mass.transpose()).amax() > 0.0 || mass.clone().cholesky().is_none() {
            return Err(Error::InvalidModel("mass matrix must be symmetric positive definite".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("penalty weight must be non-negative, got {lambda}")));
        }
        let x0 = &datasets[0].x_obs;
        if let Some(j) = datasets.iter().position(|d| &d.x_obs != x0) {
            return Err(Error::DegenerateData(format!(
                "mode {} does not share the observation heights of mode 1",
                j + 1
            )));
        }
        let hypers = vec![initial; datasets.len()];
        Ok(Self {
            query_heights: (1..=n).map(|i| i as f64 / n as f64).collect(),
            datasets,
            hypers,
            mass,
            lambda,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.datasets.len()
    }

    pub fn bounds(&self) -> HyperBounds {
        self.hypers[0].bounds()
    }

    /// `[ln gamma_1, ln beta_1, ln gamma_2, ...]`.
    pub fn log_params(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.n_modes(),
            self.hypers.iter().flat_map(|h| h.logs()),
        )
    }

    pub fn set_log_params(&mut self, theta: &[f64]) {
        let bounds = self.bounds();
        for (j, h) in self.hypers.iter_mut().enumerate() {
            *h = KernelHyper::from_logs(theta[2 * j], theta[2 * j + 1], bounds);
        }
    }

    /// Hyperparameters taken literally from `theta`, bypassing projection so
    /// that finite differences can straddle a bound.
    fn hypers_at(&self, theta: &[f64]) -> Vec<KernelHyper> {
        (0..self.n_modes())
            .map(|j| KernelHyper::unconstrained(theta[2 * j], theta[2 * j + 1]))
            .collect()
    }

    /// Joint objective and gradient at the log-parameters `theta`.
    pub fn evaluate(&self, theta: &[f64]) -> ObjectiveEvaluation {
        let n_m = self.n_modes();
        assert_eq!(theta.len(), 2 * n_m, "log-parameter vector has wrong length");
        let hypers = self.hypers_at(theta);
        let n = self.query_heights.len();

        let mut nlml = Vec::with_capacity(n_m);
        let mut gradient = DVector::zeros(2 * n_m);
        let mut means = DMatrix::zeros(n, n_m);
        let mut mean_jacobians = Vec::with_capacity(n_m);
        for (j, (data, hyper)) in self.datasets.iter().zip(&hypers).enumerate() {
            if self.lambda == 0.0 {
                let eval = nlml_with_gradient(data, hyper);
                if !eval.feasible {
                    return ObjectiveEvaluation::infeasible(n_m, self.lambda);
                }
                nlml.push(eval.value);
                gradient[2 * j] = eval.gradient[0];
                gradient[2 * j + 1] = eval.gradient[1];
                continue;
            }
            let fac = match factorize(data, hyper) {
                Ok(f) => f,
                Err(_) => return ObjectiveEvaluation::infeasible(n_m, self.lambda),
            };
            nlml.push(nlml_value(data, &fac));
            let g = gradient_from_factor(data, hyper, &fac);
            gradient[2 * j] = g[0];
            gradient[2 * j + 1] = g[1];

            let k = cross_covariance(data.x_obs.as_slice(), &self.query_heights, hyper);
            means.set_column(j, &(k.tr_mul(&fac.alpha) * data.scale));
            mean_jacobians.push(mean_jacobian_from_factor(data, hyper, &self.query_heights, &fac, &k));
        }

        let nlml_sum: f64 = nlml.iter().sum();
        if self.lambda == 0.0 {
            return ObjectiveEvaluation {
                total: nlml_sum,
                nlml,
                penalty: f64::NAN,
                lambda: 0.0,
                gradient,
                means: None,
                feasible: true,
            };
        }

        let mut normalized = DMatrix::zeros(n, n_m);
        let mut modal_masses = Vec::with_capacity(n_m);
        for j in 0..n_m {
            let mu = means.column(j).into_owned();
            let m = modal_mass(&mu, &self.mass);
            if !(m > MODAL_MASS_FLOOR) {
                return ObjectiveEvaluation::infeasible(n_m, self.lambda);
            }
            normalized.set_column(j, &(&mu / m.sqrt()));
            modal_masses.push(m);
        }
        let p = penalty(&normalized, &self.mass);
        let dp = penalty_gradient_modes(&normalized, &self.mass);
        for j in 0..n_m {
            let mu = means.column(j).into_owned();
            let m_mu = &self.mass * &mu;
            let col = dp.column(j);
            let (d_gamma, d_beta) = &mean_jacobians[j];
            let t_gamma = apply_normalization_jacobian(&mu, &m_mu, modal_masses[j], d_gamma);
            let t_beta = apply_normalization_jacobian(&mu, &m_mu, modal_masses[j], d_beta);
            gradient[2 * j] += self.lambda * col.dot(&t_gamma);
            gradient[2 * j + 1] += self.lambda * col.dot(&t_beta);
        }
        ObjectiveEvaluation {
            total: self.lambda * p + nlml_sum,
            nlml,
            penalty: p,
            lambda: self.lambda,
            gradient,
            means: Some(means),
            feasible: true,
        }
    }
}

/// One evaluation of the joint objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    pub total: f64,
    pub nlml: Vec<f64>,
    /// Unweighted orthogonality penalty `P`. Not computed (`NaN`) when the
    /// weight is zero.
    pub penalty: f64,
    pub lambda: f64,
    pub gradient: DVector<f64>,
    /// Physical posterior means over the floors above the base, when computed.
    pub means: Option<DMatrix<f64>>,
    pub feasible: bool,
}

impl ObjectiveEvaluation {
    fn infeasible(n_m: usize, lambda: f64) -> Self {
        Self {
            total: JOINT_SENTINEL,
            nlml: Vec::new(),
            penalty: f64::NAN,
            lambda,
            gradient: DVector::zeros(2 * n_m),
            means: None,
            feasible: false,
        }
    }

    pub fn nlml_sum(&self) -> f64 {
        self.nlml.iter().sum()
    }

    pub fn weighted_penalty(&self) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * self.penalty
        }
    }
}

/// Joint objective at the bank's current hyperparameters.
pub fn joint_objective(bank: &ModeBank) -> ObjectiveEvaluation {
    bank.evaluate(bank.log_params().as_slice())
}
