use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{read_json, read_table, write_json, write_table, Table};
use super::metrics::{mode_metrics, ModeMetrics};
use crate::error::{Error, Result};
use crate::gp::{nlml, posterior, standardize, GpDataset, KernelHyper};
use crate::optimizer::{
    gradient_audit, optimize_cons_sogp, optimize_sogp, Evaluation, JointObjective, Method, NlmlObjective, Objective,
    OptimizationReport, Termination, TraceEntry, DEFAULT_FD_STEP,
};
use crate::orthogonality::{mass_normalize, penalty, ModeBank};
use crate::structural::{build_shear_building, floor_heights, sample_measurements, solve_modes, BuildingModel, MeasurementSet, ModeSet};

pub const SCHEMA_VERSION: &str = "1";

pub const TRUTH_FILE: &str = "truth.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const MASS_FILE: &str = "mass_matrix.csv";
pub const META_FILE: &str = "meta.json";
pub const EXPANDED_FILE: &str = "expanded.csv";
pub const HYPERPARAMETERS_FILE: &str = "hyperparameters.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SCAN_FILE: &str = "scan.csv";
pub const SCAN_SUMMARY_FILE: &str = "scan.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

/// Low-beta window and relative range below which a scan counts as a plateau.
pub const PLATEAU_WINDOW: (f64, f64) = (0.02, 0.06);
pub const PLATEAU_RATIO: f64 = 0.10;

pub const NLML_AUDIT_TOLERANCE: f64 = 1e-5;
pub const JOINT_AUDIT_TOLERANCE: f64 = 1e-4;

fn mode_headers(prefix: &str, n_modes: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n_modes).map(move |j| format!("{prefix}{j}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Ground truth and noisy measurements of one configured experiment.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: BuildingModel,
    pub truth: ModeSet,
    pub measurements: MeasurementSet,
}

pub fn simulate(config: &RunConfig) -> Result<Simulation> {
    config.validate()?;
    let model = build_shear_building(config.n_floors, config.floor_mass, config.story_stiffness, config.damage)?;
    let truth = solve_modes(&model, config.n_modes)?;
    let measurements = sample_measurements(&truth, &config.sensor_floors, config.noise_pct, config.seed)?;
    Ok(Simulation {
        model,
        truth,
        measurements,
    })
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub schema_version: String,
    pub n_floors: usize,
    pub n_modes: usize,
    pub sensor_floors: Vec<usize>,
    pub noise_pct: f64,
    /// Per-mode measurement noise standard deviation, physical units.
    pub noise_std: Vec<f64>,
    pub seed: u64,
    /// Circular frequencies of the truth modes, rad/s.
    pub frequencies: Vec<f64>,
    pub config: RunConfig,
}

pub fn truth_table(truth: &ModeSet) -> Table {
    let n_m = truth.n_modes();
    let shapes = truth.with_base();
    let mut t = Table::new(std::iter::once("height".into()).chain(mode_headers("mode_", n_m)).collect());
    for (i, h) in truth.heights.iter().enumerate() {
        t.push(std::iter::once(*h).chain(shapes.row(i).iter().copied()).collect());
    }
    t
}

pub fn measurements_table(m: &MeasurementSet) -> Table {
    let header = ["height".to_string(), "floor".to_string()]
        .into_iter()
        .chain(mode_headers("mode_", m.n_modes()))
        .collect();
    let mut t = Table::new(header);
    for (r, (&h, &f)) in m.sensor_heights.iter().zip(&m.sensor_floors).enumerate() {
        t.push([h, f as f64].into_iter().chain(m.values.row(r).iter().copied()).collect());
    }
    t
}

pub fn mass_table(mass: &DMatrix<f64>) -> Table {
    let mut t = Table::new(mode_headers("floor_", mass.ncols()).collect());
    for row in mass.row_iter() {
        t.push(row.iter().copied().collect());
    }
    t
}

/// Writes truth, measurements, mass matrix and metadata to `out`.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<Simulation> {
    let sim = simulate(config)?;
    ensure_dir(out)?;
    write_table(&out.join(TRUTH_FILE), &truth_table(&sim.truth))?;
    write_table(&out.join(MEASUREMENTS_FILE), &measurements_table(&sim.measurements))?;
    write_table(&out.join(MASS_FILE), &mass_table(&sim.model.mass_matrix()))?;
    let meta = SimulationMeta {
        schema_version: SCHEMA_VERSION.into(),
        n_floors: config.n_floors,
        n_modes: config.n_modes,
        sensor_floors: sim.measurements.sensor_floors.clone(),
        noise_pct: config.noise_pct,
        noise_std: sim.measurements.noise_std.clone(),
        seed: config.seed,
        frequencies: sim.truth.frequencies.clone(),
        config: RunConfig {
            out: out.to_path_buf(),
            ..config.clone()
        },
    };
    write_json(&out.join(META_FILE), &meta)?;
    Ok(sim)
}

/// Everything `expand` needs, as read back from a simulation directory.
#[derive(Debug, Clone)]
pub struct ExpansionInputs {
    pub meta: SimulationMeta,
    pub measurements: MeasurementSet,
    pub mass: DMatrix<f64>,
    /// `(N + 1) x n_modes`, base row first; present when `truth.csv` exists.
    pub truth: Option<DMatrix<f64>>,
}

fn expect_len(field: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            field: field.into(),
            expected,
            found,
        });
    }
    Ok(())
}

impl ExpansionInputs {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SimulationMeta = read_json(&dir.join(META_FILE))?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                dir.join(META_FILE),
                format!("unsupported schema_version '{}'", meta.schema_version),
            ));
        }
        let (n, n_m) = (meta.n_floors, meta.n_modes);
        expect_len("meta.json noise_std", n_m, meta.noise_std.len())?;

        let path = dir.join(MEASUREMENTS_FILE);
        let table = read_table(&path)?;
        let heights = table.named_column("height", &path)?;
        let floors = table.named_column("floor", &path)?;
        expect_len("measurements.csv rows", meta.sensor_floors.len(), table.rows.len())?;
        let mut values = DMatrix::zeros(table.rows.len(), n_m);
        for j in 0..n_m {
            let col = table.named_column(&format!("mode_{}", j + 1), &path)?;
            values.set_column(j, &DVector::from_vec(col));
        }
        expect_len("measurements.csv columns", n_m + 2, table.header.len())?;
        for (r, (&f, &expected)) in floors.iter().zip(&meta.sensor_floors).enumerate() {
            if f != expected as f64 {
                return Err(Error::parse(&path, format!("row {}: floor {f} does not match meta.json sensor floor {expected}", r + 1)));
            }
        }
        let measurements = MeasurementSet {
            sensor_floors: meta.sensor_floors.clone(),
            sensor_heights: heights,
            values,
            noise_std: meta.noise_std.clone(),
            noise_pct: meta.noise_pct,
            seed: meta.seed,
        };

        let path = dir.join(MASS_FILE);
        let table = read_table(&path)?;
        expect_len("mass_matrix.csv rows", n, table.rows.len())?;
        expect_len("mass_matrix.csv columns", n, table.header.len())?;
        let mass = DMatrix::from_fn(n, n, |i, j| table.rows[i][j]);

        let path = dir.join(TRUTH_FILE);
        let truth = if path.exists() {
            let table = read_table(&path)?;
            expect_len("truth.csv rows", n + 1, table.rows.len())?;
            let mut t = DMatrix::zeros(n + 1, n_m);
            for j in 0..n_m {
                t.set_column(j, &DVector::from_vec(table.named_column(&format!("mode_{}", j + 1), &path)?));
            }
            Some(t)
        } else {
            None
        };
        Ok(Self {
            meta,
            measurements,
            mass,
            truth,
        })
    }

    pub fn from_simulation(sim: &Simulation, config: &RunConfig) -> Self {
        let meta = SimulationMeta {
            schema_version: SCHEMA_VERSION.into(),
            n_floors: sim.truth.n_floors(),
            n_modes: sim.truth.n_modes(),
            sensor_floors: sim.measurements.sensor_floors.clone(),
            noise_pct: sim.measurements.noise_pct,
            noise_std: sim.measurements.noise_std.clone(),
            seed: sim.measurements.seed,
            frequencies: sim.truth.frequencies.clone(),
            config: config.clone(),
        };
        Self {
            meta,
            measurements: sim.measurements.clone(),
            mass: sim.model.mass_matrix(),
            truth: Some(sim.truth.with_base()),
        }
    }

    pub fn datasets(&self, base_jitter: f64) -> Result<Vec<GpDataset>> {
        let m = &self.measurements;
        (0..m.n_modes())
            .map(|j| {
                let v: Vec<f64> = m.values.column(j).iter().copied().collect();
                standardize(&m.sensor_heights, &v, m.noise_std[j], base_jitter)
            })
            .collect()
    }
}

/// Runs the selected method on `inputs`.
pub fn fit(inputs: &ExpansionInputs, config: &RunConfig, method: Method) -> Result<OptimizationReport> {
    let datasets = inputs.datasets(config.base_jitter)?;
    let opt = config.optimizer_config_for(method);
    match method {
        Method::Sogp => optimize_sogp(&datasets, &opt),
        Method::ConsSogp => {
            let bank = ModeBank::new(datasets, inputs.mass.clone(), opt.lambda, opt.initial_hyper())?;
            optimize_cons_sogp(&bank, &opt)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterRow {
    pub mode: usize,
    pub gamma: f64,
    pub beta: f64,
}

/// `J = lambda P + sum L` at the optimum of a joint run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBalance {
    pub lambda: f64,
    pub weighted_penalty: f64,
    pub nlml_sum: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    pub projected_gradient_norm: f64,
    pub trace: Vec<TraceEntry>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub schema_version: String,
    pub method: Method,
    pub hyperparameters: Vec<HyperparameterRow>,
    pub nlml: Vec<f64>,
    /// Present for joint runs.
    pub balance: Option<ObjectiveBalance>,
    /// Orthogonality penalty of the mass-normalized posterior means; reported
    /// for both methods, absent if a mean vanishes.
    pub penalty: Option<f64>,
    pub runs: Vec<RunSummary>,
    /// Present when the truth was available.
    pub metrics: Option<Vec<ModeMetrics>>,
    pub mean_coverage: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExpansionResult {
    /// `i / N` for `i = 0..=N`.
    pub heights: Vec<f64>,
    /// `(N + 1) x n_modes`, base row first.
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
    pub optimization: OptimizationReport,
    pub report: ExpansionReport,
}

/// Fits, predicts over every floor and scores against the truth if present.
pub fn expand(inputs: &ExpansionInputs, config: &RunConfig, method: Method) -> Result<ExpansionResult> {
    config.validate()?;
    let datasets = inputs.datasets(config.base_jitter)?;
    let optimization = fit(inputs, config, method)?;
    let n = inputs.meta.n_floors;
    let heights = floor_heights(n);
    let n_m = datasets.len();
    let mut mean = DMatrix::zeros(n + 1, n_m);
    let mut std = DMatrix::zeros(n + 1, n_m);
    for (j, (data, hyper)) in datasets.iter().zip(&optimization.hypers).enumerate() {
        let post = posterior(data, hyper, &heights)?;
        mean.set_column(j, &post.mean);
        std.set_column(j, &post.std);
    }

    let above_base = mean.rows(1, n).into_owned();
    let penalty = above_base
        .column_iter()
        .map(|c| mass_normalize(&c.into_owned(), &inputs.mass))
        .collect::<Result<Vec<_>>>()
        .ok()
        .map(|cols| penalty(&DMatrix::from_columns(&cols), &inputs.mass));

    let metrics = match &inputs.truth {
        Some(truth) => Some(
            (0..n_m)
                .map(|j| {
                    let col = |m: &DMatrix<f64>| m.column(j).iter().copied().collect::<Vec<f64>>();
                    mode_metrics(&col(&mean), &col(&std), &col(truth), &inputs.measurements.sensor_floors)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let mean_coverage = metrics
        .as_ref()
        .map(|m| m.iter().map(|x| x.coverage).sum::<f64>() / m.len() as f64);

    let balance = (method == Method::ConsSogp).then(|| {
        let p = optimization.penalty.unwrap_or(0.0);
        ObjectiveBalance {
            lambda: optimization.lambda,
            weighted_penalty: optimization.lambda * p,
            nlml_sum: optimization.nlml_sum(),
            total: optimization.objective,
        }
    });
    let report = ExpansionReport {
        schema_version: SCHEMA_VERSION.into(),
        method,
        hyperparameters: optimization
            .hypers
            .iter()
            .enumerate()
            .map(|(j, h)| HyperparameterRow {
                mode: j + 1,
                gamma: h.gamma(),
                beta: h.beta(),
            })
            .collect(),
        nlml: optimization.nlml.clone(),
        balance,
        penalty,
        runs: optimization
            .runs
            .iter()
            .map(|r| RunSummary {
                termination: r.termination,
                iterations: r.iterations,
                evaluations: r.evaluations,
                projected_gradient_norm: r.projected_gradient.iter().fold(0.0, |a, v| a.max(v.abs())),
                trace: r.trace.clone(),
            })
            .collect(),
        metrics,
        mean_coverage,
    };
    Ok(ExpansionResult {
        heights,
        mean,
        std,
        optimization,
        report,
    })
}

pub fn expanded_table(result: &ExpansionResult) -> Table {
    let n_m = result.mean.ncols();
    let header = std::iter::once("height".to_string())
        .chain((1..=n_m).flat_map(|j| [format!("mean_{j}"), format!("std_{j}")]))
        .collect();
    let mut t = Table::new(header);
    for (i, &h) in result.heights.iter().enumerate() {
        let mut row = vec![h];
        for j in 0..n_m {
            row.push(result.mean[(i, j)]);
            row.push(result.std[(i, j)]);
        }
        t.push(row);
    }
    t
}

pub fn hyperparameter_table(rows: &[HyperparameterRow]) -> Table {
    let mut t = Table::new(vec!["mode".into(), "gamma".into(), "beta".into()]);
    for r in rows {
        t.push(vec![r.mode as f64, r.gamma, r.beta]);
    }
    t
}

/// Reads a simulation directory, expands every mode and writes the results to `out`.
pub fn cmd_expand(config: &RunConfig, input: &Path, out: &Path) -> Result<ExpansionResult> {
    let inputs = ExpansionInputs::load(input)?;
    let result = expand(&inputs, config, config.method)?;
    ensure_dir(out)?;
    write_table(&out.join(EXPANDED_FILE), &expanded_table(&result))?;
    write_table(&out.join(HYPERPARAMETERS_FILE), &hyperparameter_table(&result.report.hyperparameters))?;
    write_json(&out.join(REPORT_FILE), &result.report)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaSource {
    Given,
    ConsSogpOptimum,
}

/// Contents of `scan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub schema_version: String,
    pub mode: usize,
    pub gamma: f64,
    pub gamma_source: GammaSource,
    pub points: usize,
    pub window: (f64, f64),
    pub window_range: Option<f64>,
    pub full_range: f64,
    /// `window_range / full_range`; absent when either is undefined.
    pub window_ratio: Option<f64>,
    pub plateau: bool,
    /// Some interior grid point lies strictly below both endpoints.
    pub interior_minimum: bool,
    pub argmin_beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRequest {
    /// 1-based mode index.
    pub mode: usize,
    pub gamma: Option<f64>,
    pub beta_min: f64,
    pub beta_max: f64,
    pub points: usize,
}

/// `points` values spaced evenly in `ln beta` over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64).exp())
            .collect(),
    }
}

/// Plateau and interior-minimum classification of a `(beta, nlml)` scan.
pub fn classify_scan(betas: &[f64], values: &[f64]) -> (Option<f64>, f64, Option<f64>, bool, bool) {
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (hi >= lo).then_some(hi - lo)
    };
    let full = range(&mut values.iter().copied()).unwrap_or(0.0);
    let window = range(
        &mut betas
            .iter()
            .zip(values)
            .filter(|(b, _)| **b >= PLATEAU_WINDOW.0 && **b <= PLATEAU_WINDOW.1)
            .map(|(_, v)| *v),
    );
    let ratio = window.filter(|_| full > 0.0).map(|w| w / full);
    let plateau = ratio.is_some_and(|r| r <= PLATEAU_RATIO);
    let interior = values.len() >= 3 && {
        let ends = values[0].min(values[values.len() - 1]);
        values[1..values.len() - 1].iter().any(|&v| v < ends)
    };
    (window, full, ratio, plateau, interior)
}

pub fn nlml_scan(inputs: &ExpansionInputs, config: &RunConfig, request: &ScanRequest) -> Result<(Table, ScanSummary)> {
    config.validate()?;
    let n_m = inputs.meta.n_modes;
    if request.mode == 0 || request.mode > n_m {
        return Err(Error::InvalidConfig(format!("mode must be in 1..={n_m}, got {}", request.mode)));
    }
    let (lo, hi) = config.bounds.beta;
    if !(request.beta_min >= lo && request.beta_max <= hi && request.beta_min <= request.beta_max) {
        return Err(Error::InvalidConfig(format!(
            "beta grid [{}, {}] must lie within the bounds [{lo}, {hi}]",
            request.beta_min, request.beta_max
        )));
    }
    if request.points == 0 {
        return Err(Error::InvalidConfig("scan needs at least one grid point".into()));
    }
    let datasets = inputs.datasets(config.base_jitter)?;
    let data = &datasets[request.mode - 1];
    let (gamma, gamma_source) = match request.gamma {
        Some(g) => (g, GammaSource::Given),
        None => {
            let fitted = fit(inputs, config, Method::ConsSogp)?;
            (fitted.hypers[request.mode - 1].gamma(), GammaSource::ConsSogpOptimum)
        }
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    let betas = log_grid(request.beta_min, request.beta_max, request.points);
    let values: Vec<f64> = betas
        .iter()
        .map(|&b| nlml(data, &KernelHyper::unconstrained(gamma.ln(), b.ln())))
        .collect();
    let mut table = Table::new(vec!["beta".into(), "nlml".into()]);
    for (b, v) in betas.iter().zip(&values) {
        table.push(vec![*b, *v]);
    }
    let (window_range, full_range, window_ratio, plateau, interior_minimum) = classify_scan(&betas, &values);
    let argmin = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best });
    let summary = ScanSummary {
        schema_version: SCHEMA_VERSION.into(),
        mode: request.mode,
        gamma,
        gamma_source,
        points: betas.len(),
        window: PLATEAU_WINDOW,
        window_range,
        full_range,
        window_ratio,
        plateau,
        interior_minimum,
        argmin_beta: betas[argmin],
    };
    Ok((table, summary))
}

pub fn cmd_nlml_scan(config: &RunConfig, input: &Path, out: &Path, request: &ScanRequest) -> Result<ScanSummary> {
    let inputs = ExpansionInputs::load(input)?;
    let (table, summary) = nlml_scan(&inputs, config, request)?;
    ensure_dir(out)?;
    write_table(&out.join(SCAN_FILE), &table)?;
    write_json(&out.join(SCAN_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Scales the first gradient component; exercises the auditor itself.
struct Corrupted<'a>(&'a dyn Objective);

impl Objective for Corrupted<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let mut e = self.0.evaluate(x);
        e.gradient[0] *= 1.01;
        e
    }
}

/// Contents of `gradcheck.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub schema_version: String,
    pub method: Method,
    pub lambda: f64,
    pub points: usize,
    pub point_seed: u64,
    pub step: f64,
    /// Worst relative error per mode over all points.
    pub nlml_max_relative_error: Vec<f64>,
    /// Joint objective; present for `cons-sogp`.
    pub joint_max_relative_error: Option<f64>,
    pub nlml_tolerance: f64,
    pub joint_tolerance: f64,
    /// The objective the method optimizes is within its tolerance.
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRequest {
    pub points: usize,
    pub point_seed: u64,
    pub corrupt_gradient: bool,
}

/// Audits analytic gradients at random log-uniform points inside the bounds.
pub fn gradcheck(config: &RunConfig, request: &GradcheckRequest) -> Result<GradcheckReport> {
    let sim = simulate(config)?;
    let inputs = ExpansionInputs::from_simulation(&sim, config);
    let datasets = inputs.datasets(config.base_jitter)?;
    let n_m = datasets.len();
    let bank = ModeBank::new(datasets.clone(), inputs.mass.clone(), config.lambda, config.optimizer_config().initial_hyper())?;
    let joint = config.method == Method::ConsSogp;
    let (lo, hi) = config.bounds.log_box();
    let mut rng = ChaCha8Rng::seed_from_u64(request.point_seed);

    let audit = |objective: &dyn Objective, point: &[f64]| {
        if request.corrupt_gradient {
            gradient_audit(&Corrupted(objective), point, DEFAULT_FD_STEP)
        } else {
            gradient_audit(objective, point, DEFAULT_FD_STEP)
        }
        .max_relative_error
    };

    let mut nlml_err = vec![0.0f64; if request.points == 0 { 0 } else { n_m }];
    let mut joint_err: Option<f64> = None;
    for _ in 0..request.points {
        let point: Vec<f64> = (0..2 * n_m).map(|i| rng.gen_range(lo[i % 2]..hi[i % 2])).collect();
        for (j, data) in datasets.iter().enumerate() {
            let e = audit(&NlmlObjective { data }, &point[2 * j..2 * j + 2]);
            nlml_err[j] = nlml_err[j].max(e);
        }
        if joint {
            let e = audit(&JointObjective { bank: &bank }, &point);
            joint_err = Some(joint_err.unwrap_or(0.0).max(e));
        }
    }
    let passed = if joint {
        joint_err.map_or(true, |e| e <= JOINT_AUDIT_TOLERANCE)
    } else {
        nlml_err.iter().all(|&e| e <= NLML_AUDIT_TOLERANCE)
    };
    Ok(GradcheckReport {
        schema_version: SCHEMA_VERSION.into(),
        method: config.method,
        lambda: if joint { config.lambda } else { 0.0 },
        points: request.points,
        point_seed: request.point_seed,
        step: DEFAULT_FD_STEP,
        nlml_max_relative_error: nlml_err,
        joint_max_relative_error: joint_err,
        nlml_tolerance: NLML_AUDIT_TOLERANCE,
        joint_tolerance: JOINT_AUDIT_TOLERANCE,
        passed,
    })
}

pub fn cmd_gradcheck(config: &RunConfig, out: &Path, request: &GradcheckRequest) -> Result<GradcheckReport> {
    let report = gradcheck(config, request)?;
    ensure_dir(out)?;
    write_json(&out.join(GRADCHECK_FILE), &report)?;
    Ok(report)
}

/// Directory a command writes to: the flag if given, else the config's.
pub fn output_dir(flag: Option<&PathBuf>, config: &RunConfig) -> PathBuf {
    flag.cloned().unwrap_or_else(|| config.out.clone())
}
