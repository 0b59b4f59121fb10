//! Hyperparameter fitting in log space: independent per-mode runs and one
//! joint run over every mode under the orthogonality penalty.

mod audit;
mod bfgs;

pub use audit::{gradient_audit, CoordinateAudit, GradientAudit, DEFAULT_FD_STEP};
pub use bfgs::{
    minimize, BfgsSettings, BoundState, BoxBounds, Evaluation, FnObjective, Objective, RunOutcome,
    Termination, TraceEntry,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{nlml_with_gradient, GpDataset, HyperBounds, KernelHyper};
use crate::orthogonality::ModeBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Independent GP per mode.
    Sogp,
    /// Joint fit under the mass-orthogonality penalty.
    ConsSogp,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Sogp => "sogp",
            Method::ConsSogp => "cons-sogp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub initial_gamma: f64,
    pub initial_beta: f64,
    pub bounds: HyperBounds,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub lambda: f64,
}

impl OptimizerConfig {
    pub fn sogp() -> Self {
        Self {
            initial_gamma: 1.0,
            initial_beta: 0.1,
            bounds: HyperBounds::default(),
            gradient_tolerance: 1e-7,
            step_tolerance: 1e-7,
            max_iterations: 500,
            lambda: 0.0,
        }
    }

    pub fn cons_sogp(lambda: f64) -> Self {
        Self {
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
            lambda,
            ..Self::sogp()
        }
    }

    pub fn for_method(method: Method, lambda: f64) -> Self {
        match method {
            Method::Sogp => Self::sogp(),
            Method::ConsSogp => Self::cons_sogp(lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let (g, b) = (self.initial_gamma, self.initial_beta);
        if !(g > self.bounds.gamma.0 && g < self.bounds.gamma.1 && b > self.bounds.beta.0 && b < self.bounds.beta.1) {
            return Err(Error::InvalidConfig(format!(
                "initial point (gamma {g}, beta {b}) must lie strictly inside the bounds"
            )));
        }
        if !(self.gradient_tolerance > 0.0 && self.step_tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn initial_hyper(&self) -> KernelHyper {
        KernelHyper::with_bounds(self.initial_gamma, self.initial_beta, self.bounds)
    }

    fn settings(&self) -> BfgsSettings {
        BfgsSettings {
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
            max_iterations: self.max_iterations,
            ..BfgsSettings::default()
        }
    }

    fn log_box(&self, n_modes: usize) -> BoxBounds {
        let (lo, hi) = self.bounds.log_box();
        BoxBounds::new(
            lo.iter().copied().cycle().take(2 * n_modes).collect(),
            hi.iter().copied().cycle().take(2 * n_modes).collect(),
        )
        .expect("validated bounds")
    }
}

/// NLML of one mode as a function of `[ln gamma, ln beta]`.
pub struct NlmlObjective<'a> {
    pub data: &'a GpDataset,
}

impl Objective for NlmlObjective<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let eval = nlml_with_gradient(self.data, &KernelHyper::unconstrained(x[0], x[1]));
        Evaluation {
            value: eval.value,
            gradient: DVector::from_row_slice(&eval.gradient),
            feasible: eval.feasible,
        }
    }
}

/// Joint penalized objective over all `2 n_m` log-hyperparameters.
pub struct JointObjective<'a> {
    pub bank: &'a ModeBank,
}

impl Objective for JointObjective<'_> {
    fn dim(&self) -> usize {
        2 * self.bank.n_modes()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let eval = self.bank.evaluate(x);
        Evaluation {
            value: eval.total,
            gradient: eval.gradient,
            feasible: eval.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub method: Method,
    pub hypers: Vec<KernelHyper>,
    /// Final objective: the summed NLML for independent runs, `J` for the joint run.
    pub objective: f64,
    pub nlml: Vec<f64>,
    pub lambda: f64,
    /// Unweighted orthogonality penalty at the optimum (joint run only).
    pub penalty: Option<f64>,
    /// One run per mode for independent fits, a single run for the joint fit.
    pub runs: Vec<RunOutcome>,
}

impl OptimizationReport {
    pub fn nlml_sum(&self) -> f64 {
        self.nlml.iter().sum()
    }

    pub fn weighted_penalty(&self) -> Option<f64> {
        self.penalty.map(|p| self.lambda * p)
    }

    pub fn log_params(&self) -> Vec<f64> {
        self.hypers.iter().flat_map(|h| h.logs()).collect()
    }

    pub fn feasible(&self) -> bool {
        self.runs.iter().all(|r| r.termination != Termination::Infeasible)
    }
}

/// Fits every mode independently by minimizing its NLML.
pub fn optimize_sogp(datasets: &[GpDataset], config: &OptimizerConfig) -> Result<OptimizationReport> {
    config.validate()?;
    let settings = config.settings();
    let bounds = config.log_box(1);
    let x0 = config.initial_hyper().logs();
    let mut hypers = Vec::with_capacity(datasets.len());
    let mut nlml = Vec::with_capacity(datasets.len());
    let mut runs = Vec::with_capacity(datasets.len());
    for data in datasets {
        let run = minimize(&NlmlObjective { data }, &bounds, &x0, &settings);
        hypers.push(KernelHyper::from_logs(run.x[0], run.x[1], config.bounds));
        nlml.push(run.value);
        runs.push(run);
    }
    Ok(OptimizationReport {
        method: Method::Sogp,
        objective: nlml.iter().sum(),
        hypers,
        nlml,
        lambda: 0.0,
        penalty: None,
        runs,
    })
}

/// Fits all modes at once by minimizing `lambda * P + sum NLML`.
///
/// The bank's own weight is replaced by `config.lambda`.
pub fn optimize_cons_sogp(bank: &ModeBank, config: &OptimizerConfig) -> Result<OptimizationReport> {
    config.validate()?;
    let mut bank = bank.clone();
    bank.lambda = config.lambda;
    let n_m = bank.n_modes();
    let x0: Vec<f64> = (0..n_m).flat_map(|_| config.initial_hyper().logs()).collect();
    let run = minimize(&JointObjective { bank: &bank }, &config.log_box(n_m), &x0, &config.settings());
    bank.set_log_params(&run.x);
    let final_eval = bank.evaluate(&run.x);
    let penalty = (final_eval.feasible && config.lambda > 0.0).then_some(final_eval.penalty);
    Ok(OptimizationReport {
        method: Method::ConsSogp,
        hypers: bank.hypers.clone(),
        objective: run.value,
        nlml: final_eval.nlml,
        lambda: config.lambda,
        penalty,
        runs: vec![run],
    })
}
