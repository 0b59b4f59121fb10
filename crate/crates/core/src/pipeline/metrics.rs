//! Agreement between expanded and ground-truth mode shapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the 95% band in posterior standard deviations.
pub const Z_95: f64 = 1.96;

/// Modal assurance criterion `(a.b)^2 / ((a.a)(b.b))`.
pub fn compute_mac(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            field: "mode shape".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::DegenerateData("MAC of a zero vector".into()));
    }
    let ab = dot(a, b);
    Ok((ab * ab / (aa * bb)).min(1.0))
}

/// Flips `estimate` when that makes it correlate positively with `truth`.
/// Returns whether a flip happened.
pub fn align_sign(estimate: &mut [f64], truth: &[f64]) -> bool {
    let dot: f64 = estimate.iter().zip(truth).map(|(x, y)| x * y).sum();
    if dot < 0.0 {
        estimate.iter_mut().for_each(|v| *v = -*v);
        true
    } else {
        false
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Fraction of the points in `at` where `truth` lies inside `mean +- 1.96 std`.
pub fn coverage(mean: &[f64], std: &[f64], truth: &[f64], at: &[usize]) -> f64 {
    if at.is_empty() {
        return f64::NAN;
    }
    let inside = at
        .iter()
        .filter(|&&i| (truth[i] - mean[i]).abs() <= Z_95 * std[i])
        .count();
    inside as f64 / at.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mac: f64,
    pub rmse: f64,
    /// 95% band coverage over the uninstrumented floors.
    pub coverage: f64,
    pub sign_flipped: bool,
}

/// Metrics of one expanded mode. All slices run over floors `0..=N`; the
/// base is excluded from every metric and `sensor_floors` from coverage.
pub fn mode_metrics(mean: &[f64], std: &[f64], truth: &[f64], sensor_floors: &[usize]) -> Result<ModeMetrics> {
    let mut aligned = mean.to_vec();
    let sign_flipped = align_sign(&mut aligned, truth);
    let floors: Vec<usize> = (1..truth.len()).collect();
    let pick = |v: &[f64]| floors.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let unmeasured: Vec<usize> = floors.iter().copied().filter(|f| !sensor_floors.contains(f)).collect();
    Ok(ModeMetrics {
        mac: compute_mac(&pick(&aligned), &pick(truth))?,
        rmse: rmse(&pick(&aligned), &pick(truth)),
        coverage: coverage(&aligned, std, truth, &unmeasured),
        sign_flipped,
    })
}
