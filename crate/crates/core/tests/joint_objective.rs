mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modexp::gp::{nlml_with_gradient, posterior, standardize, GpDataset, HyperBounds, KernelHyper};
use modexp::optimizer::{gradient_audit, JointObjective, DEFAULT_FD_STEP};
use modexp::orthogonality::{
    mass_normalize, normalization_jacobian, penalty, penalty_gradient_modes, posterior_mean_jacobian, ModeBank,
};
use modexp::structural::floor_heights;

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * n as f64 * 0.1
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Largest entry-wise discrepancy relative to the larger of the two
/// matrices' max-abs entries.
fn matrix_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-8)
}

#[test]
fn normalized_vectors_have_unit_modal_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n = rng.gen_range(1..12);
        let m = random_spd(&mut rng, n);
        let mu = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let v = mass_normalize(&mu, &m).unwrap();
        assert!((v.dot(&(&m * &v)) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn penalty_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = 1e-6;
    for _ in 0..30 {
        let (n, k) = (rng.gen_range(2..10), rng.gen_range(1..5));
        let m = random_spd(&mut rng, n);
        let phi = random_matrix(&mut rng, n, k);
        let g = penalty_gradient_modes(&phi, &m);
        for i in 0..n {
            for j in 0..k {
                let mut p = phi.clone();
                p[(i, j)] += h;
                let plus = penalty(&p, &m);
                p[(i, j)] -= 2.0 * h;
                let minus = penalty(&p, &m);
                let fd = (plus - minus) / (2.0 * h);
                let err = common::relative_error(g[(i, j)], fd);
                assert!(err <= 1e-6, "entry ({i},{j}): {} vs {fd} ({err:e})", g[(i, j)]);
            }
        }
    }
}

#[test]
fn gradient_column_vanishes_for_a_mode_orthonormal_to_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 6;
    let m = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5f64..2.0)));
    // Column 0 lives on the first floor only; the others avoid it and overlap.
    let mut m = m;
    m[(0, 0)] = 1.0;
    let mut phi = random_matrix(&mut rng, n, 3);
    phi.column_mut(0).fill(0.0);
    phi[(0, 0)] = 1.0;
    phi.row_mut(0).columns_mut(1, 2).fill(0.0);
    let g = penalty_gradient_modes(&phi, &m);
    assert_eq!(g.column(0).amax(), 0.0);
    assert!(g.column(1).amax() > 1e-3 && g.column(2).amax() > 1e-3);
}

#[test]
fn normalization_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let h = 1e-6;
    for _ in 0..50 {
        let n = rng.gen_range(2..10);
        let m = random_spd(&mut rng, n);
        let mu = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let jac = normalization_jacobian(&mu, &m).unwrap();
        let fd = DMatrix::from_fn(n, n, |i, j| {
            let mut p = mu.clone();
            p[j] += h;
            let plus = mass_normalize(&p, &m).unwrap()[i];
            p[j] -= 2.0 * h;
            let minus = mass_normalize(&p, &m).unwrap()[i];
            (plus - minus) / (2.0 * h)
        });
        let err = matrix_error(&jac, &fd);
        assert!(err <= 1e-6, "{err:e}");
    }
}

#[test]
fn normalization_jacobian_at_unit_modal_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let m = random_spd(&mut rng, 5);
    let mu = mass_normalize(&DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)), &m).unwrap();
    let jac = normalization_jacobian(&mu, &m).unwrap();
    let expected = DMatrix::identity(5, 5) - &mu * (mu.transpose() * &m);
    assert!((jac - expected).amax() <= 1e-12);
}

fn random_mode_data(rng: &mut ChaCha8Rng, heights: &[f64], noise: f64) -> GpDataset {
    let v: Vec<f64> = heights.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    standardize(heights, &v, noise, modexp::gp::BASE_JITTER).unwrap()
}

#[test]
fn mean_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let sensors = [10.0 / 53.0, 20.0 / 53.0, 30.0 / 53.0, 40.0 / 53.0, 1.0];
    let xq: Vec<f64> = floor_heights(53)[1..].to_vec();
    let (lo, hi) = HyperBounds::default().log_box();
    let h = 1e-6;
    for _ in 0..50 {
        let noise = rng.gen_range(0.005..0.05);
        let data = random_mode_data(&mut rng, &sensors, noise);
        let (lg, lb) = (rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]));
        let (dg, db) = posterior_mean_jacobian(&data, &KernelHyper::unconstrained(lg, lb), &xq).unwrap();
        // Large beta makes the covariance nearly singular, so the difference
        // quotients are taken in double-double to keep round-off out of the oracle.
        let (fd_g, fd_b) = common::mean_fd_extended(&data, [lg, lb], &xq, h);
        let column = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
        let eg = matrix_error(&column(dg.as_slice()), &column(&fd_g));
        let eb = matrix_error(&column(db.as_slice()), &column(&fd_b));
        assert!(eg <= 1e-5 && eb <= 1e-5, "gamma {eg:e}, beta {eb:e} at ({lg}, {lb})");
    }
}

#[test]
fn noiseless_mean_is_pinned_at_observations() {
    let heights = [0.25, 0.5, 0.75, 1.0];
    let data = GpDataset::new(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.0, 0.4, -0.3, 0.8, 0.1], vec![0.0; 5], 1.0).unwrap();
    let hyper = KernelHyper::new(1.3, 0.3);
    let (dg, _) = posterior_mean_jacobian(&data, &hyper, &heights).unwrap();
    assert_eq!(dg.amax(), 0.0);
    let (lg, lb) = (hyper.log_gamma(), hyper.log_beta());
    let h = 1e-6;
    let mean = |b: f64| posterior(&data, &KernelHyper::unconstrained(lg, b), &heights).unwrap().mean;
    let fd = (mean(lb + h) - mean(lb - h)) / (2.0 * h);
    assert!(fd.amax() <= 1e-6, "{fd}");
}

fn example_bank(seed: u64, lambda: f64) -> ModeBank {
    let sc = common::example_scenario(seed);
    ModeBank::new(sc.datasets, sc.model.mass_matrix(), lambda, KernelHyper::new(1.0, 0.1)).unwrap()
}

fn random_log_point(rng: &mut ChaCha8Rng, n_m: usize) -> Vec<f64> {
    let (lo, hi) = HyperBounds::default().log_box();
    (0..2 * n_m).map(|i| rng.gen_range(lo[i % 2]..hi[i % 2])).collect()
}

#[test]
fn joint_gradient_matches_central_differences() {
    let bank = example_bank(42, 1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..50 {
        let x = random_log_point(&mut rng, 5);
        let audit = gradient_audit(&JointObjective { bank: &bank }, &x, DEFAULT_FD_STEP);
        assert!(audit.max_relative_error <= 1e-4, "{x:?}: {:e}", audit.max_relative_error);
    }
}

#[test]
fn zero_weight_decouples_modes() {
    let bank = example_bank(42, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..20 {
        let x = random_log_point(&mut rng, 5);
        let eval = bank.evaluate(&x);
        let mut sum = 0.0;
        for (j, data) in bank.datasets.iter().enumerate() {
            let e = nlml_with_gradient(data, &KernelHyper::unconstrained(x[2 * j], x[2 * j + 1]));
            sum += e.value;
            assert!((eval.gradient[2 * j] - e.gradient[0]).abs() <= 1e-12);
            assert!((eval.gradient[2 * j + 1] - e.gradient[1]).abs() <= 1e-12);
        }
        assert!((eval.total - sum).abs() <= 1e-12 * sum.abs().max(1.0));
    }
}

#[test]
fn total_decomposes_into_penalty_and_nlml() {
    let bank = example_bank(7, 1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..50 {
        let eval = bank.evaluate(&random_log_point(&mut rng, 5));
        assert!(eval.feasible);
        assert_eq!(eval.total, eval.lambda * eval.penalty + eval.nlml.iter().sum::<f64>());
        assert_eq!(eval.gradient.len(), 10);
    }
}

#[test]
fn exact_truth_means_contribute_no_penalty() {
    // Noiseless sensors at every floor make the posterior means interpolate
    // the truth, which is mass-orthogonal; only the base jitter keeps the
    // penalty from vanishing exactly.
    let sc = common::example_scenario(1);
    let heights = floor_heights(53)[1..].to_vec();
    let datasets: Vec<GpDataset> = (0..5)
        .map(|j| {
            let v: Vec<f64> = sc.truth.shapes.column(j).iter().copied().collect();
            standardize(&heights, &v, 0.0, modexp::gp::BASE_JITTER).unwrap()
        })
        .collect();
    let bank = ModeBank::new(datasets.clone(), sc.model.mass_matrix(), 1000.0, KernelHyper::new(1.0, 0.1)).unwrap();
    let free = ModeBank { lambda: 0.0, ..bank.clone() };
    let x: Vec<f64> = (0..5).flat_map(|_| KernelHyper::new(1.0, 0.05).logs()).collect();
    let with = bank.evaluate(&x);
    let without = free.evaluate(&x);
    assert!(with.penalty <= 1e-8, "{}", with.penalty);
    assert!((with.total - without.total).abs() <= 1e-6, "{} vs {}", with.total, without.total);
    assert!((&with.gradient - &without.gradient).amax() <= 1e-4 * without.gradient.amax().max(1.0));
}
