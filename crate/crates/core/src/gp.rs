//! Single-output Gaussian process regression over normalized floor height
//! with a squared-exponential kernel.
//!
//! All hyperparameter derivatives are taken with respect to `ln gamma` and
//! `ln beta`, the coordinates the optimizer works in.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise standard deviation, in standardized units, of the virtual zero
/// observation at the base.
pub const BASE_JITTER: f64 = 1e-6;

/// Value reported by [`nlml`] when the covariance cannot be factorized.
pub const NLML_SENTINEL: f64 = 1e12;

/// Box bounds on the log-hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub gamma: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            gamma: (0.1, 10.0),
            beta: (0.02, 1.5),
        }
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} bounds must satisfy 0 < lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// `(lower, upper)` of `[ln gamma, ln beta]`.
    pub fn log_box(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.gamma.0.ln(), self.beta.0.ln()],
            [self.gamma.1.ln(), self.beta.1.ln()],
        )
    }
}

/// Squared-exponential kernel hyperparameters, held as logarithms and kept
/// inside their bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    log_gamma: f64,
    log_beta: f64,
    bounds: HyperBounds,
}

impl KernelHyper {
    /// Physical `gamma`, `beta` under the default bounds.
    pub fn new(gamma: f64, beta: f64) -> Self {
        Self::from_logs(gamma.ln(), beta.ln(), HyperBounds::default())
    }

    pub fn from_logs(log_gamma: f64, log_beta: f64, bounds: HyperBounds) -> Self {
        let (lo, hi) = bounds.log_box();
        Self {
            log_gamma: log_gamma.clamp(lo[0], hi[0]),
            log_beta: log_beta.clamp(lo[1], hi[1]),
            bounds,
        }
    }

    /// Log-hyperparameters taken as given, with bounds wide open. Used for
    /// objective evaluations that must not be projected (finite differences,
    /// line-search trials).
    pub fn unconstrained(log_gamma: f64, log_beta: f64) -> Self {
        Self {
            log_gamma,
            log_beta,
            bounds: HyperBounds {
                gamma: (0.0, f64::INFINITY),
                beta: (0.0, f64::INFINITY),
            },
        }
    }

    pub fn with_bounds(gamma: f64, beta: f64, bounds: HyperBounds) -> Self {
        Self::from_logs(gamma.ln(), beta.ln(), bounds)
    }

    pub fn log_gamma(&self) -> f64 {
        self.log_gamma
    }

    pub fn log_beta(&self) -> f64 {
        self.log_beta
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn bounds(&self) -> HyperBounds {
        self.bounds
    }

    pub fn logs(&self) -> [f64; 2] {
        [self.log_gamma, self.log_beta]
    }
}

/// Observations of one mode in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    pub x_obs: DVector<f64>,
    pub y_obs: DVector<f64>,
    /// Per-observation noise standard deviation.
    pub noise_diag: DVector<f64>,
    /// Physical value of one standardized unit.
    pub scale: f64,
}

impl GpDataset {
    pub fn new(x_obs: Vec<f64>, y_obs: Vec<f64>, noise_diag: Vec<f64>, scale: f64) -> Result<Self> {
        let n = x_obs.len();
        if n == 0 {
            return Err(Error::DegenerateData("dataset has no observations".into()));
        }
        for (field, len) in [("y_obs", y_obs.len()), ("noise_diag", noise_diag.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    field: field.into(),
                    expected: n,
                    found: len,
                });
            }
        }
        if noise_diag.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::DegenerateData("noise standard deviations must be non-negative".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::DegenerateData(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            x_obs: DVector::from_vec(x_obs),
            y_obs: DVector::from_vec(y_obs),
            noise_diag: DVector::from_vec(noise_diag),
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.x_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_obs.is_empty()
    }

    /// Same inputs and noise with different targets.
    pub fn with_targets(&self, y_obs: DVector<f64>) -> Self {
        Self {
            y_obs,
            ..self.clone()
        }
    }

    pub(crate) fn noise_variance(&self) -> DVector<f64> {
        self.noise_diag.map(|s| s * s)
    }
}

/// Builds the augmented, standardized dataset of one mode.
///
/// The scale is the sample standard deviation of the physical sensor values;
/// targets and sensor noise are divided by it and the virtual base
/// observation `(0, 0)` with noise `base_jitter` is put first.
pub fn standardize(
    sensor_heights: &[f64],
    values: &[f64],
    noise_std: f64,
    base_jitter: f64,
) -> Result<GpDataset> {
    if values.len() != sensor_heights.len() {
        return Err(Error::DimensionMismatch {
            field: "sensor values".into(),
            expected: sensor_heights.len(),
            found: values.len(),
        });
    }
    if values.len() < 2 {
        return Err(Error::DegenerateData(
            "at least two sensor values are needed to standardize a mode".into(),
        ));
    }
    let mut prev = 0.0;
    for &x in sensor_heights {
        if !(x > prev && x <= 1.0) {
            return Err(Error::DegenerateData(format!(
                "sensor heights must be strictly increasing in (0, 1], got {sensor_heights:?}"
            )));
        }
        prev = x;
    }
    if !(base_jitter > 0.0) || !(noise_std >= 0.0) {
        return Err(Error::DegenerateData(format!(
            "noise must be non-negative and jitter positive (noise {noise_std}, jitter {base_jitter})"
        )));
    }
    let scale = sample_std(values);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateData(
            "sensor values have zero spread; the mode cannot be standardized".into(),
        ));
    }
    let mut x = Vec::with_capacity(values.len() + 1);
    let mut y = Vec::with_capacity(values.len() + 1);
    let mut noise = Vec::with_capacity(values.len() + 1);
    x.push(0.0);
    y.push(0.0);
    noise.push(base_jitter);
    for (&h, &v) in sensor_heights.iter().zip(values) {
        x.push(h);
        y.push(v / scale);
        noise.push(noise_std / scale);
    }
    GpDataset::new(x, y, noise, scale)
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `gamma^2 exp(-(x - x')^2 / (2 beta^2))`.
pub fn se_kernel(x: f64, x_prime: f64, hyper: &KernelHyper) -> f64 {
    let gamma = hyper.gamma();
    let beta = hyper.beta();
    let d = x - x_prime;
    gamma * gamma * (-0.5 * d * d / (beta * beta)).exp()
}

pub fn covariance_matrix(xs: &[f64], hyper: &KernelHyper) -> DMatrix<f64> {
    let n = xs.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        c[(j, j)] = se_kernel(xs[j], xs[j], hyper);
        for i in (j + 1)..n {
            let k = se_kernel(xs[i], xs[j], hyper);
            c[(i, j)] = k;
            c[(j, i)] = k;
        }
    }
    c
}

/// `|xs| x |xq|` matrix of kernel values between observation and query heights.
pub fn cross_covariance(xs: &[f64], xq: &[f64], hyper: &KernelHyper) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xq.len(), |i, j| se_kernel(xs[i], xq[j], hyper))
}

/// `C ⊙ (Δx)² / β²`, the derivative of a kernel matrix with respect to `ln beta`.
pub(crate) fn log_beta_derivative(k: &DMatrix<f64>, xr: &[f64], xc: &[f64], beta: f64) -> DMatrix<f64> {
    let b2 = beta * beta;
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        let d = xr[i] - xc[j];
        k[(i, j)] * d * d / b2
    })
}

/// Cholesky factorization of `A = C + D` together with `alpha = A^-1 y`.
pub(crate) struct Factorized {
    pub cov: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub alpha: DVector<f64>,
}

pub(crate) fn factorize(data: &GpDataset, hyper: &KernelHyper) -> Result<Factorized> {
    let cov = covariance_matrix(data.x_obs.as_slice(), hyper);
    let a = &cov + DMatrix::from_diagonal(&data.noise_variance());
    let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite {
        gamma: hyper.gamma(),
        beta: hyper.beta(),
    })?;
    let alpha = chol.solve(&data.y_obs);
    Ok(Factorized { cov, chol, alpha })
}

impl Factorized {
    fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Predictive mean and standard deviation in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub query_heights: Vec<f64>,
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

pub fn posterior(data: &GpDataset, hyper: &KernelHyper, xq: &[f64]) -> Result<GpPosterior> {
    let fac = factorize(data, hyper)?;
    let k = cross_covariance(data.x_obs.as_slice(), xq, hyper);
    let mean = k.tr_mul(&fac.alpha) * data.scale;
    let v = fac
        .chol
        .l_dirty()
        .solve_lower_triangular(&k)
        .expect("Cholesky factor has a positive diagonal");
    let prior = hyper.gamma().powi(2);
    let std = DVector::from_iterator(
        xq.len(),
        v.column_iter()
            .map(|col| (prior - col.norm_squared()).max(0.0).sqrt() * data.scale),
    );
    Ok(GpPosterior {
        query_heights: xq.to_vec(),
        mean,
        std,
    })
}

/// Negative log marginal likelihood with its gradient in log-hyperparameter
/// space. `feasible` is false when the covariance could not be factorized,
/// in which case the value is [`NLML_SENTINEL`] and the gradient zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmlEvaluation {
    pub value: f64,
    pub gradient: [f64; 2],
    pub feasible: bool,
}

impl NlmlEvaluation {
    fn infeasible() -> Self {
        Self {
            value: NLML_SENTINEL,
            gradient: [0.0; 2],
            feasible: false,
        }
    }
}

pub(crate) fn nlml_value(data: &GpDataset, fac: &Factorized) -> f64 {
    let n = data.len() as f64;
    0.5 * data.y_obs.dot(&fac.alpha) + 0.5 * fac.log_det() + 0.5 * n * (2.0 * PI).ln()
}

pub fn nlml(data: &GpDataset, hyper: &KernelHyper) -> f64 {
    match factorize(data, hyper) {
        Ok(fac) => nlml_value(data, &fac),
        Err(_) => NLML_SENTINEL,
    }
}

pub fn nlml_gradient(data: &GpDataset, hyper: &KernelHyper) -> [f64; 2] {
    nlml_with_gradient(data, hyper).gradient
}

pub fn nlml_with_gradient(data: &GpDataset, hyper: &KernelHyper) -> NlmlEvaluation {
    let fac = match factorize(data, hyper) {
        Ok(f) => f,
        Err(_) => return NlmlEvaluation::infeasible(),
    };
    let value = nlml_value(data, &fac);
    let gradient = gradient_from_factor(data, hyper, &fac);
    NlmlEvaluation {
        value,
        gradient,
        feasible: true,
    }
}

/// `-1/2 tr[(alpha alpha^T - A^-1) dC/dtheta]` for both log-hyperparameters.
pub(crate) fn gradient_from_factor(data: &GpDataset, hyper: &KernelHyper, fac: &Factorized) -> [f64; 2] {
    let inv = fac.chol.inverse();
    let w = &fac.alpha * fac.alpha.transpose() - inv;
    let x = data.x_obs.as_slice();
    let d_beta = log_beta_derivative(&fac.cov, x, x, hyper.beta());
    let g_gamma = -0.5 * w.dot(&(&fac.cov * 2.0));
    let g_beta = -0.5 * w.dot(&d_beta);
    [g_gamma, g_beta]
}
