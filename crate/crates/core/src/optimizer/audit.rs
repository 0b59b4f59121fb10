//! Central finite-difference check of analytic gradients.

use serde::{Deserialize, Serialize};

use super::bfgs::Objective;

pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateAudit {
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientAudit {
    pub coordinates: Vec<CoordinateAudit>,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient at `point` with central differences of
/// step `step` in every coordinate. The relative error of a coordinate uses
/// the denominator `max(|analytic|, |fd|, 1e-8)`.
pub fn gradient_audit<O: Objective + ?Sized>(objective: &O, point: &[f64], step: f64) -> GradientAudit {
    let analytic = objective.evaluate(point).gradient;
    let mut probe = point.to_vec();
    let coordinates: Vec<CoordinateAudit> = (0..point.len())
        .map(|i| {
            probe[i] = point[i] + step;
            let plus = objective.evaluate(&probe).value;
            probe[i] = point[i] - step;
            let minus = objective.evaluate(&probe).value;
            probe[i] = point[i];
            let fd = (plus - minus) / (2.0 * step);
            let a = analytic[i];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            CoordinateAudit {
                analytic: a,
                finite_difference: fd,
                relative_error: (a - fd).abs() / denom,
            }
        })
        .collect();
    let max_relative_error = coordinates
        .iter()
        .map(|c| c.relative_error)
        .fold(0.0, f64::max);
    GradientAudit {
        coordinates,
        max_relative_error,
    }
}
