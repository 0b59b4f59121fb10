//! Projected BFGS for smooth box-constrained minimization.
//!
//! Variables sitting on a bound whose gradient points outward are frozen for
//! the iteration. The full quasi-Newton step of the remaining ones is projected
//! onto the box and the search backtracks along the segment from the current
//! point to that projection, accepting on `f(x_t) <= f(x) + c g^T (x_t - x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value, gradient and feasibility flag of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub feasible: bool,
}

/// Smooth objective with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Evaluation;
}

/// Adapts a closure returning `(value, gradient)` into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, DVector<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, DVector<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let (value, gradient) = (self.f)(x);
        Evaluation {
            feasible: value.is_finite(),
            value,
            gradient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                field: "upper bounds".into(),
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidConfig(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..x.len()).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// `P(x - g) - x`, zero exactly at first-order stationary points.
    pub fn projected_gradient(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        self.project(&(x - g)) - x
    }

    pub fn state_of(&self, x: &DVector<f64>) -> Vec<BoundState> {
        (0..x.len())
            .map(|i| {
                if x[i] <= self.lower[i] {
                    BoundState::Lower
                } else if x[i] >= self.upper[i] {
                    BoundState::Upper
                } else {
                    BoundState::Free
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Projected gradient below tolerance.
    Gradient,
    /// Accepted step below tolerance, or no acceptable step along the
    /// steepest-descent direction.
    Step,
    MaxIter,
    Infeasible,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Gradient => "gradient",
            Termination::Step => "step",
            Termination::MaxIter => "max-iter",
            Termination::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub projected_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsSettings {
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub contraction: f64,
    pub max_backtracks: usize,
    pub curvature_floor: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-7,
            step_tolerance: 1e-7,
            max_iterations: 500,
            armijo: 1e-4,
            contraction: 0.5,
            max_backtracks: 40,
            curvature_floor: 1e-12,
        }
    }
}

/// Result of one minimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub projected_gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub bound_state: Vec<BoundState>,
    pub trace: Vec<TraceEntry>,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Minimizes `objective` over `bounds` starting from the projection of `x0`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    bounds: &BoxBounds,
    x0: &[f64],
    settings: &BfgsSettings,
) -> RunOutcome {
    let n = bounds.dim();
    assert_eq!(objective.dim(), n, "objective and bounds disagree on dimension");
    assert_eq!(x0.len(), n, "starting point has wrong dimension");

    let mut x = bounds.project(&DVector::from_column_slice(x0));
    let mut current = objective.evaluate(x.as_slice());
    let mut evaluations = 1;
    let mut trace = Vec::new();

    let finish = |x: &DVector<f64>, eval: &Evaluation, iterations, evaluations, termination, trace| {
        let pg = bounds.projected_gradient(x, &eval.gradient);
        RunOutcome {
            x: x.as_slice().to_vec(),
            value: eval.value,
            gradient: eval.gradient.as_slice().to_vec(),
            projected_gradient: pg.as_slice().to_vec(),
            iterations,
            evaluations,
            termination,
            bound_state: bounds.state_of(x),
            trace,
        }
    };

    if !current.feasible {
        return finish(&x, &current, 0, evaluations, Termination::Infeasible, trace);
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut iteration = 0;
    loop {
        let pg = bounds.projected_gradient(&x, &current.gradient);
        let pg_norm = inf_norm(&pg);
        trace.push(TraceEntry {
            iteration,
            objective: current.value,
            projected_gradient_norm: pg_norm,
        });
        if pg_norm <= settings.gradient_tolerance {
            return finish(&x, &current, iteration, evaluations, Termination::Gradient, trace);
        }
        if iteration >= settings.max_iterations {
            return finish(&x, &current, iteration, evaluations, Termination::MaxIter, trace);
        }

        let g = &current.gradient;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let pinned_low = x[i] <= bounds.lower[i] && g[i] > 0.0;
                let pinned_high = x[i] >= bounds.upper[i] && g[i] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();

        let (mut accepted, used) = line_search(objective, bounds, &x, &current, &h, &free, settings);
        evaluations += used;
        if accepted.is_none() && !fresh_h {
            // A stale curvature model can point uphill in practice; retry once
            // from steepest descent before giving up.
            h = DMatrix::identity(n, n);
            fresh_h = true;
            let (retry, used) = line_search(objective, bounds, &x, &current, &h, &free, settings);
            evaluations += used;
            accepted = retry;
        }
        iteration += 1;
        let Some((x_new, eval_new)) = accepted else {
            return finish(&x, &current, iteration, evaluations, Termination::Step, trace);
        };

        let s = &x_new - &x;
        let y = &eval_new.gradient - &current.gradient;
        let step_norm = inf_norm(&s);
        x = x_new;
        current = eval_new;

        let sy = s.dot(&y);
        if sy > settings.curvature_floor {
            if fresh_h {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                fresh_h = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s y^T H + H y s^T) + (rho^2 y^T H y + rho) s s^T
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        } else {
            h = DMatrix::identity(n, n);
            fresh_h = true;
        }

        if step_norm <= settings.step_tolerance {
            let pg = bounds.projected_gradient(&x, &current.gradient);
            trace.push(TraceEntry {
                iteration,
                objective: current.value,
                projected_gradient_norm: inf_norm(&pg),
            });
            let reason = if inf_norm(&pg) <= settings.gradient_tolerance {
                Termination::Gradient
            } else {
                Termination::Step
            };
            return finish(&x, &current, iteration, evaluations, reason, trace);
        }
    }
}

/// Backtracking search towards the projected quasi-Newton step. Returns the
/// accepted point with its evaluation, if any, and the evaluations spent.
fn line_search<O: Objective + ?Sized>(
    objective: &O,
    bounds: &BoxBounds,
    x: &DVector<f64>,
    current: &Evaluation,
    h: &DMatrix<f64>,
    free: &[bool],
    settings: &BfgsSettings,
) -> (Option<(DVector<f64>, Evaluation)>, usize) {
    let n = x.len();
    let g = &current.gradient;
    let g_free = DVector::from_fn(n, |i, _| if free[i] { g[i] } else { 0.0 });
    let mut d = -(h * &g_free);
    for i in 0..n {
        if !free[i] {
            d[i] = 0.0;
        }
    }
    if !(g_free.dot(&d) < 0.0) {
        d = -g_free;
    }

    let target = bounds.project(&(x + &d));
    let mut t = 1.0;
    let mut used = 0;
    for _ in 0..=settings.max_backtracks {
        let trial = x + (&target - x) * t;
        let decrease = g.dot(&(&trial - x));
        if decrease < 0.0 {
            used += 1;
            let eval = objective.evaluate(trial.as_slice());
            if eval.feasible && eval.value <= current.value + settings.armijo * decrease {
                return (Some((trial, eval)), used);
            }
        }
        t *= settings.contraction;
    }
    (None, used)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(c: Vec<f64>) -> impl Objective {
        let n = c.len();
        FnObjective::new(n, move |x: &[f64]| {
            let d = DVector::from_fn(n, |i, _| x[i] - c[i]);
            (d.norm_squared(), d * 2.0)
        })
    }

    fn unit_box(n: usize) -> BoxBounds {
        BoxBounds::new(vec![-1.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn interior_minimum() {
        let c = vec![0.3, -0.7, 0.1];
        let out = minimize(&quadratic(c.clone()), &unit_box(3), &[0.9, 0.9, -0.9], &BfgsSettings::default());
        assert!(out.iterations < 50);
        for i in 0..3 {
            assert!((out.x[i] - c[i]).abs() < 1e-6);
        }
        assert_eq!(out.termination, Termination::Gradient);
        assert!(out.bound_state.iter().all(|s| *s == BoundState::Free));
    }

    #[test]
    fn minimum_outside_box_is_projected() {
        let out = minimize(&quadratic(vec![2.0, -3.0, 0.5]), &unit_box(3), &[0.0; 3], &BfgsSettings::default());
        assert!((out.x[0] - 1.0).abs() < 1e-12);
        assert!((out.x[1] + 1.0).abs() < 1e-12);
        assert!((out.x[2] - 0.5).abs() < 1e-6);
        assert_eq!(out.bound_state, vec![BoundState::Upper, BoundState::Lower, BoundState::Free]);
        // Gradient pushes outward on the active bounds.
        assert!(out.gradient[0] < 0.0 && out.gradient[1] > 0.0);
    }

    #[test]
    fn rosenbrock_in_box() {
        let f = FnObjective::new(2, |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            (v, g)
        });
        let bounds = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let out = minimize(&f, &bounds, &[-1.2, 1.0], &BfgsSettings::default());
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{:?}", out.x);
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let out = minimize(&quadratic(vec![5.0, 0.2]), &unit_box(2), &[-1.0, -1.0], &BfgsSettings::default());
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        assert!(unit_box(2).contains(&DVector::from_vec(out.x.clone())));
    }

    #[test]
    fn infeasible_start() {
        let f = FnObjective::new(1, |_x: &[f64]| (f64::INFINITY, DVector::zeros(1)));
        let out = minimize(&f, &unit_box(1), &[0.0], &BfgsSettings::default());
        assert_eq!(out.termination, Termination::Infeasible);
    }

    #[test]
    fn max_iterations_respected() {
        let settings = BfgsSettings {
            max_iterations: 1,
            ..BfgsSettings::default()
        };
        let f = FnObjective::new(2, |x: &[f64]| {
            let v = x[0].powi(4) + x[1].powi(4) + x[0] * x[1];
            let g = DVector::from_vec(vec![4.0 * x[0].powi(3) + x[1], 4.0 * x[1].powi(3) + x[0]]);
            (v, g)
        });
        let out = minimize(&f, &unit_box(2), &[0.9, 0.1], &settings);
        assert_eq!(out.termination, Termination::MaxIter);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(BoxBounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxBounds::new(vec![1.0], vec![2.0, 3.0]).is_err());
    }
}
