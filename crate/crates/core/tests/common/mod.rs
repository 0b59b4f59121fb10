//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use twofloat::TwoFloat;

use modexp::gp::{standardize, GpDataset, BASE_JITTER};
use modexp::structural::{build_shear_building, sample_measurements, solve_modes, BuildingModel, Damage, MeasurementSet, ModeSet};

pub const SENSOR_FLOORS: [usize; 5] = [10, 20, 30, 40, 53];

pub struct Scenario {
    pub model: BuildingModel,
    pub truth: ModeSet,
    pub measurements: MeasurementSet,
    pub datasets: Vec<GpDataset>,
}

/// 53-floor building, 80% stiffness loss at floor 15, five modes, 2% noise.
pub fn example_scenario(seed: u64) -> Scenario {
    let model = build_shear_building(53, 1.0, 1.0, Some(Damage { floor: 15, retained: 0.2 })).unwrap();
    let truth = solve_modes(&model, 5).unwrap();
    let measurements = sample_measurements(&truth, &SENSOR_FLOORS, 0.02, seed).unwrap();
    let datasets = (0..5)
        .map(|j| {
            let v: Vec<f64> = measurements.values.column(j).iter().copied().collect();
            standardize(&measurements.sensor_heights, &v, measurements.noise_std[j], BASE_JITTER).unwrap()
        })
        .collect();
    Scenario { model, truth, measurements, datasets }
}

type Dd = TwoFloat;

fn dd(v: f64) -> Dd {
    TwoFloat::from(v)
}

fn se_extended(a: f64, b: f64, g2: Dd, b2: Dd) -> Dd {
    let d = dd(a) - dd(b);
    g2 * (-(d * d) / (b2 * 2.0)).exp()
}

/// Lower Cholesky factor of `C + D` in double-double arithmetic.
fn cholesky_extended(data: &GpDataset, g2: Dd, b2: Dd) -> Vec<Vec<Dd>> {
    let n = data.len();
    let x = data.x_obs.as_slice();
    let mut l = vec![vec![dd(0.0); n]; n];
    for j in 0..n {
        let s = dd(data.noise_diag[j]);
        let mut diag = se_extended(x[j], x[j], g2, b2) + s * s;
        for k in 0..j {
            diag -= l[j][k] * l[j][k];
        }
        l[j][j] = diag.sqrt();
        for i in j + 1..n {
            let mut v = se_extended(x[i], x[j], g2, b2);
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / l[j][j];
        }
    }
    l
}

fn forward(l: &[Vec<Dd>], y: &[Dd]) -> Vec<Dd> {
    let mut z = vec![dd(0.0); y.len()];
    for i in 0..y.len() {
        let mut v = y[i];
        for k in 0..i {
            v -= l[i][k] * z[k];
        }
        z[i] = v / l[i][i];
    }
    z
}

fn backward(l: &[Vec<Dd>], z: &[Dd]) -> Vec<Dd> {
    let n = z.len();
    let mut a = vec![dd(0.0); n];
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in i + 1..n {
            v -= l[k][i] * a[k];
        }
        a[i] = v / l[i][i];
    }
    a
}

/// NLML in double-double arithmetic with a plain Cholesky, independent of the
/// library's f64 path.
pub fn nlml_extended(data: &GpDataset, log_gamma: Dd, log_beta: Dd) -> Dd {
    let n = data.len();
    let (g2, b2) = ((log_gamma * 2.0).exp(), (log_beta * 2.0).exp());
    let l = cholesky_extended(data, g2, b2);
    let y: Vec<Dd> = data.y_obs.iter().map(|&v| dd(v)).collect();
    let z = forward(&l, &y);
    let mut total = dd(0.0);
    for i in 0..n {
        total += z[i] * z[i] * 0.5 + l[i][i].ln();
    }
    total + dd(2.0 * std::f64::consts::PI).ln() * (n as f64 * 0.5)
}

/// Physical posterior mean at `xq` in double-double arithmetic.
pub fn mean_extended(data: &GpDataset, log_gamma: Dd, log_beta: Dd, xq: &[f64]) -> Vec<Dd> {
    let (g2, b2) = ((log_gamma * 2.0).exp(), (log_beta * 2.0).exp());
    let l = cholesky_extended(data, g2, b2);
    let y: Vec<Dd> = data.y_obs.iter().map(|&v| dd(v)).collect();
    let alpha = backward(&l, &forward(&l, &y));
    xq.iter()
        .map(|&q| {
            let mut m = dd(0.0);
            for (i, &x) in data.x_obs.iter().enumerate() {
                m += se_extended(q, x, g2, b2) * alpha[i];
            }
            m * data.scale
        })
        .collect()
}

/// Central differences of [`mean_extended`] in `ln gamma` and `ln beta`.
pub fn mean_fd_extended(data: &GpDataset, logs: [f64; 2], xq: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let (lg, lb, h) = (dd(logs[0]), dd(logs[1]), dd(h));
    let diff = |p: Vec<Dd>, m: Vec<Dd>| p.iter().zip(&m).map(|(a, b)| ((*a - *b) / (h * 2.0)).into()).collect();
    (
        diff(mean_extended(data, lg + h, lb, xq), mean_extended(data, lg - h, lb, xq)),
        diff(mean_extended(data, lg, lb + h, xq), mean_extended(data, lg, lb - h, xq)),
    )
}

/// Central differences of [`nlml_extended`] with step `h` in log space.
pub fn nlml_fd_extended(data: &GpDataset, logs: [f64; 2], h: f64) -> [f64; 2] {
    let (lg, lb) = (TwoFloat::from(logs[0]), TwoFloat::from(logs[1]));
    let h = TwoFloat::from(h);
    let dg = (nlml_extended(data, lg + h, lb) - nlml_extended(data, lg - h, lb)) / (h * 2.0);
    let db = (nlml_extended(data, lg, lb + h) - nlml_extended(data, lg, lb - h)) / (h * 2.0);
    [dg.into(), db.into()]
}

/// Relative error with the audit's denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
