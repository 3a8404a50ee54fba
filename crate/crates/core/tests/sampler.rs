use approx::assert_relative_eq;
use nalgebra::DMatrix;

use gladyshev_core::sampler::{
    increment_cov_matrix, sample_increments, GaussianFactor, IncrementCovariance, PathSampler,
};
use gladyshev_core::{Execution, Integrand, Kernel, Partition};

const TRIALS: usize = 100_000;

// empirical mean vector and covariance matrix of draws from `factor`
fn moments(factor: &GaussianFactor, trials: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = factor.dim();
    let mut mean = vec![0.0; n];
    let mut second = DMatrix::zeros(n, n);
    for trial in 0..trials {
        let x = factor.sample(99, trial as u64);
        for i in 0..n {
            mean[i] += x[i];
            for j in 0..n {
                second[(i, j)] += x[i] * x[j];
            }
        }
    }
    let t = trials as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    (mean, second / t)
}

fn fbm_entry(h: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * ((b - c).abs().powf(e) + (a - d).abs().powf(e) - (b - d).abs().powf(e) - (a - c).abs().powf(e))
}

#[test]
fn identity_covariance_draws_are_centered() {
    let factor = GaussianFactor::new(&DMatrix::identity(3, 3)).unwrap();
    let (mean, second) = moments(&factor, TRIALS);
    let se = (1.0 / TRIALS as f64).sqrt();
    for i in 0..3 {
        assert!(mean[i].abs() < 4.0 * se, "mean {i}: {}", mean[i]);
        // Var(x^2) = 2 for a standard normal
        assert!((second[(i, i)] - 1.0).abs() < 4.0 * (2.0 / TRIALS as f64).sqrt());
    }
}

#[test]
fn empirical_covariance_matches_matrix() {
    let kernel = Kernel::fbm(0.3, 1.0).unwrap();
    let f = Integrand::constant(1.0, 1.0).unwrap();
    let kappa = Partition::new(vec![0.0, 0.2, 0.25, 0.6, 1.0]).unwrap();
    let cov = increment_cov_matrix(&f, &kernel, &kappa, 1e-10, Execution::Parallel).unwrap();
    let m = cov.matrix();
    let (_, second) = moments(cov.factor(), TRIALS);
    for i in 0..4 {
        for j in 0..4 {
            // Var(x_i x_j) = M_ii M_jj + M_ij^2 for centered Gaussians
            let se = ((m[(i, i)] * m[(j, j)] + m[(i, j)].powi(2)) / TRIALS as f64).sqrt();
            assert!((second[(i, j)] - m[(i, j)]).abs() < 4.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn zero_matrix_gives_zero_draws() {
    let kappa = Partition::uniform(0.0, 1.0, 3).unwrap();
    let cov = IncrementCovariance::from_matrix(kappa, DMatrix::zeros(3, 3)).unwrap();
    assert_eq!(sample_increments(&cov, 5), vec![0.0; 3]);
}

#[test]
fn unit_integrand_matrices_are_closed_form() {
    let one = Integrand::constant(1.0, 1.0).unwrap();
    let bm = Kernel::brownian(1.0).unwrap();
    let two = Partition::uniform(0.0, 1.0, 2).unwrap();
    let m = increment_cov_matrix(&one, &bm, &two, 1e-10, Execution::Sequential).unwrap();
    assert_eq!(m.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    let step = Integrand::step(&[0.0, 0.5], &[1.0, 2.0], 1.0).unwrap();
    let m = increment_cov_matrix(&step, &bm, &two, 1e-12, Execution::Sequential).unwrap();
    assert_relative_eq!(m.matrix()[(0, 0)], 0.5, max_relative = 1e-10);
    assert_relative_eq!(m.matrix()[(1, 1)], 2.0, max_relative = 1e-10);
    assert!(m.matrix()[(0, 1)].abs() < 1e-10);

    let h = 0.35;
    let fbm = Kernel::fbm(h, 1.0).unwrap();
    let kappa = Partition::new(vec![0.0, 0.1, 0.45, 0.5, 0.9, 1.0]).unwrap();
    let m = increment_cov_matrix(&one, &fbm, &kappa, 1e-10, Execution::Parallel).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let (a, b) = kappa.cell(i);
            let (c, d) = kappa.cell(j);
            assert!((m.matrix()[(i, j)] - fbm_entry(h, a, b, c, d)).abs() < 1e-15);
        }
    }
}

#[test]
fn fine_matrix_aggregates_to_coarse_matrix() {
    let f = Integrand::polynomial(vec![1.0, -1.5, 0.5], 1.0).unwrap();
    let k = Kernel::sub_fbm(0.35, 1.0).unwrap();
    let fine = Partition::dyadic(1.0, 3).unwrap();
    let coarse = Partition::dyadic(1.0, 1).unwrap();
    let tol = 1e-10;
    let mf = increment_cov_matrix(&f, &k, &fine, tol, Execution::Parallel).unwrap();
    let mc = increment_cov_matrix(&f, &k, &coarse, tol, Execution::Parallel).unwrap();
    let agg = mf.aggregate(&coarse).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((agg[(i, j)] - mc.matrix()[(i, j)]).abs() < 1e-8, "({i},{j})");
        }
    }
}

#[test]
fn policies_and_seeds_are_deterministic() {
    let f = Integrand::polynomial(vec![0.2, 1.0], 1.0).unwrap();
    let k = Kernel::fbm(0.7, 1.0).unwrap();
    let kappa = Partition::uniform(0.0, 1.0, 6).unwrap();
    let a = increment_cov_matrix(&f, &k, &kappa, 1e-10, Execution::Sequential).unwrap();
    let b = increment_cov_matrix(&f, &k, &kappa, 1e-10, Execution::Parallel).unwrap();
    assert_eq!(a.matrix(), b.matrix());
    assert_eq!(sample_increments(&a, 17), sample_increments(&b, 17));
    assert_ne!(sample_increments(&a, 17), sample_increments(&a, 18));
}

#[test]
fn jitter_stays_bounded_for_smooth_paths() {
    let k = Kernel::fbm(0.95, 1.0).unwrap();
    let kappa = Partition::uniform(0.0, 1.0, 256).unwrap();
    let one = Integrand::constant(1.0, 1.0).unwrap();
    let cov = increment_cov_matrix(&one, &k, &kappa, 1e-10, Execution::Parallel).unwrap();
    let max_diag = cov.matrix().diagonal().max();
    assert!(cov.jitter_used() <= 1e-8 * max_diag);
}

#[test]
fn fbm_paths_have_power_variance() {
    let h = 0.3;
    let k = Kernel::fbm(h, 1.0).unwrap();
    let kappa = Partition::uniform(0.0, 1.0, 4).unwrap();
    let sampler = PathSampler::new(&k, &kappa).unwrap();
    let n = 40_000;
    let mut second = [0.0; 5];
    for trial in 0..n {
        let x = sampler.sample(3, trial);
        assert_eq!(x[0], 0.0);
        for (acc, xi) in second.iter_mut().zip(&x) {
            *acc += xi * xi / n as f64;
        }
    }
    for (i, &m) in second.iter().enumerate().skip(1) {
        let v = (i as f64 / 4.0).powf(2.0 * h);
        // Var(x^2) = 2 v^2
        assert!((m - v).abs() < 4.0 * v * (2.0 / n as f64).sqrt(), "point {i}");
    }
}

#[test]
fn brownian_path_increments_are_uncorrelated() {
    let k = Kernel::brownian(1.0).unwrap();
    let kappa = Partition::uniform(0.0, 1.0, 3).unwrap();
    let sampler = PathSampler::new(&k, &kappa).unwrap();
    let n = 20_000;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for trial in 0..n {
        let x = sampler.sample(8, trial);
        let (u, v) = (x[1] - x[0], x[3] - x[2]);
        sxy += u * v;
        sxx += u * u;
        syy += v * v;
    }
    let corr = sxy / (sxx * syy).sqrt();
    assert!(corr.abs() < 4.0 / (n as f64).sqrt());
}

#[test]
fn half_subfractional_marginals_match_brownian() {
    let kappa = Partition::uniform(0.0, 1.0, 4).unwrap();
    let sub = PathSampler::new(&Kernel::sub_fbm(0.5, 1.0).unwrap(), &kappa).unwrap();
    let bm = PathSampler::new(&Kernel::brownian(1.0).unwrap(), &kappa).unwrap();
    let n = 5_000;
    for point in 1..=4 {
        let mut a: Vec<f64> = (0..n as u64).map(|t| sub.sample(1, t)[point]).collect();
        let mut b: Vec<f64> = (0..n as u64).map(|t| bm.sample(2, t)[point]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample Kolmogorov-Smirnov statistic against its 1% critical value
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(d < 1.628 * (2.0 / n as f64).sqrt(), "point {point}: D = {d}");
    }
}
