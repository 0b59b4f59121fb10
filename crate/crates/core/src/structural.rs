//! Shear-building ground truth: matrix assembly, modal analysis and noisy
//! sparse sampling of mode shapes at instrumented floors.
//!
//! Mode shapes of `M^-1 K` do not change when `K` and `M` are scaled by a
//! common factor, so the default unit mass and unit story stiffness only fix
//! the absolute frequency scale, which plays no role in shape expansion.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::jacobi_eigen;
use crate::error::{Error, Result};

/// Stiffness reduction of a single story.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Damage {
    /// Story index in `1..=n_floors`; story `i` joins floor `i` to floor `i - 1`.
    pub floor: usize,
    /// Fraction of the original stiffness that survives, in `(0, 1)`.
    pub retained: f64,
}

/// Lumped-mass shear building with `n_floors` floors above a fixed base.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    masses: Vec<f64>,
    story_stiffnesses: Vec<f64>,
}

impl BuildingModel {
    pub fn new(masses: Vec<f64>, story_stiffnesses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidModel("building needs at least one floor".into()));
        }
        if masses.len() != story_stiffnesses.len() {
            return Err(Error::DimensionMismatch {
                field: "story_stiffnesses".into(),
                expected: masses.len(),
                found: story_stiffnesses.len(),
            });
        }
        if let Some(i) = masses.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidModel(format!(
                "mass of floor {} must be positive, got {}",
                i + 1,
                masses[i]
            )));
        }
        if let Some(i) = story_stiffnesses
            .iter()
            .position(|k| !(*k > 0.0 && k.is_finite()))
        {
            return Err(Error::InvalidModel(format!(
                "stiffness of story {} must be positive, got {}",
                i + 1,
                story_stiffnesses[i]
            )));
        }
        Ok(Self {
            masses,
            story_stiffnesses,
        })
    }

    pub fn n_floors(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn story_stiffnesses(&self) -> &[f64] {
        &self.story_stiffnesses
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.masses))
    }

    /// Tridiagonal stiffness with `K[i,i] = k_i + k_{i+1}` and `K[i,i+1] = -k_{i+1}`.
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = self.n_floors();
        let k = &self.story_stiffnesses;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            let above = if i + 1 < n { k[i + 1] } else { 0.0 };
            out[(i, i)] = k[i] + above;
            if i + 1 < n {
                out[(i, i + 1)] = -above;
                out[(i + 1, i)] = -above;
            }
        }
        out
    }
}

/// Uniform shear building, optionally with one weakened story.
pub fn build_shear_building(
    n_floors: usize,
    mass: f64,
    stiffness: f64,
    damage: Option<Damage>,
) -> Result<BuildingModel> {
    if n_floors == 0 {
        return Err(Error::InvalidModel("n_floors must be positive".into()));
    }
    if !(mass > 0.0) || !(stiffness > 0.0) {
        return Err(Error::InvalidModel(format!(
            "mass and stiffness must be positive (mass = {mass}, stiffness = {stiffness})"
        )));
    }
    let mut stiffnesses = vec![stiffness; n_floors];
    if let Some(d) = damage {
        if d.floor == 0 || d.floor > n_floors {
            return Err(Error::InvalidModel(format!(
                "damage floor {} outside 1..={n_floors}",
                d.floor
            )));
        }
        if !(d.retained > 0.0 && d.retained < 1.0) {
            return Err(Error::InvalidModel(format!(
                "retained stiffness fraction must lie in (0, 1), got {}",
                d.retained
            )));
        }
        stiffnesses[d.floor - 1] *= d.retained;
    }
    BuildingModel::new(vec![mass; n_floors], stiffnesses)
}

/// Mode shapes over the floors above the base, one unit-norm column per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    /// Normalized heights `i / N` for `i = 0..=N`, base included.
    pub heights: Vec<f64>,
    /// `N x n_modes`, base row excluded.
    pub shapes: DMatrix<f64>,
    /// Circular frequencies in rad/s, ascending.
    pub frequencies: Vec<f64>,
}

impl ModeSet {
    pub fn n_modes(&self) -> usize {
        self.shapes.ncols()
    }

    pub fn n_floors(&self) -> usize {
        self.shapes.nrows()
    }

    /// Columns rescaled so that `phi^T M phi = 1`.
    pub fn unit_modal_mass(&self, mass: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.shapes.clone();
        for mut col in out.column_iter_mut() {
            let m = (col.transpose() * mass * &col)[(0, 0)];
            col /= m.sqrt();
        }
        out
    }

    /// Shapes with the zero base ordinate prepended, `(N + 1) x n_modes`.
    pub fn with_base(&self) -> DMatrix<f64> {
        self.shapes.clone().insert_row(0, 0.0)
    }
}

/// Normalized floor heights `0, 1/N, ..., 1`.
pub fn floor_heights(n_floors: usize) -> Vec<f64> {
    (0..=n_floors)
        .map(|i| i as f64 / n_floors as f64)
        .collect()
}

/// Lowest `n_modes` mode shapes of the building.
///
/// Solves the symmetric problem `M^-1/2 K M^-1/2 v = lambda v`, maps back with
/// `phi = M^-1/2 v`, normalizes each column to unit Euclidean norm and makes
/// the top-floor ordinate non-negative.
pub fn solve_modes(model: &BuildingModel, n_modes: usize) -> Result<ModeSet> {
    let n = model.n_floors();
    if n_modes == 0 || n_modes > n {
        return Err(Error::InvalidModel(format!(
            "n_modes must lie in 1..={n}, got {n_modes}"
        )));
    }
    let inv_sqrt_m = DVector::from_iterator(n, model.masses().iter().map(|m| 1.0 / m.sqrt()));
    let k = model.stiffness_matrix();
    let scaled = DMatrix::from_fn(n, n, |i, j| inv_sqrt_m[i] * k[(i, j)] * inv_sqrt_m[j]);
    let eig = jacobi_eigen(&scaled)?;

    let mut shapes = DMatrix::zeros(n, n_modes);
    let mut frequencies = Vec::with_capacity(n_modes);
    for j in 0..n_modes {
        let mut phi = eig.eigenvectors.column(j).component_mul(&inv_sqrt_m);
        phi /= phi.norm();
        if phi[n - 1] < 0.0 {
            phi = -phi;
        }
        shapes.set_column(j, &phi);
        frequencies.push(eig.eigenvalues[j].max(0.0).sqrt());
    }
    Ok(ModeSet {
        heights: floor_heights(n),
        shapes,
        frequencies,
    })
}

/// Sparse noisy observations of every mode at the instrumented floors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub sensor_floors: Vec<usize>,
    pub sensor_heights: Vec<f64>,
    /// `n_sensors x n_modes`.
    pub values: DMatrix<f64>,
    /// Per-mode noise standard deviation in physical units.
    pub noise_std: Vec<f64>,
    pub noise_pct: f64,
    pub seed: u64,
}

impl MeasurementSet {
    pub fn n_sensors(&self) -> usize {
        self.sensor_floors.len()
    }

    pub fn n_modes(&self) -> usize {
        self.values.ncols()
    }
}

/// Checks that floors are strictly increasing and inside `1..=n_floors`.
pub fn validate_sensor_floors(sensor_floors: &[usize], n_floors: usize) -> Result<()> {
    if sensor_floors.is_empty() {
        return Err(Error::InvalidMeasurement("no sensor floors given".into()));
    }
    for w in sensor_floors.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidMeasurement(format!(
                "sensor floors must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(&f) = sensor_floors.iter().find(|&&f| f == 0 || f > n_floors) {
        return Err(Error::InvalidMeasurement(format!(
            "sensor floor {f} outside 1..={n_floors}"
        )));
    }
    Ok(())
}

/// Samples the truth at `sensor_floors` and adds Gaussian noise whose standard
/// deviation is `noise_pct` times the Euclidean norm of each mode.
///
/// Noise comes from ChaCha8 seeded with `seed` through `SeedableRng::seed_from_u64`,
/// transformed to standard normal deviates by the ziggurat sampler of
/// `rand_distr`. Draws are consumed mode by mode, sensors in ascending order.
pub fn sample_measurements(
    truth: &ModeSet,
    sensor_floors: &[usize],
    noise_pct: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let n = truth.n_floors();
    validate_sensor_floors(sensor_floors, n)?;
    if !(noise_pct >= 0.0 && noise_pct.is_finite()) {
        return Err(Error::InvalidMeasurement(format!(
            "noise percentage must be a finite non-negative fraction, got {noise_pct}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_modes = truth.n_modes();
    let mut values = DMatrix::zeros(sensor_floors.len(), n_modes);
    let mut noise_std = Vec::with_capacity(n_modes);
    for j in 0..n_modes {
        let std = noise_pct * truth.shapes.column(j).norm();
        for (r, &floor) in sensor_floors.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(r, j)] = truth.shapes[(floor - 1, j)] + std * z;
        }
        noise_std.push(std);
    }
    Ok(MeasurementSet {
        sensor_floors: sensor_floors.to_vec(),
        sensor_heights: sensor_floors.iter().map(|&f| f as f64 / n as f64).collect(),
        values,
        noise_std,
        noise_pct,
        seed,
    })
}
