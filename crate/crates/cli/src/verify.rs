//! Identity suite for a single kernel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gladyshev_core::kernels::{lei_nualart_constants, verify_local_stationarity};
use gladyshev_core::{Family, Kernel, Result, SignStructure};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Maximal residual, or violation count for sign checks.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

struct Points {
    pairs: Vec<(f64, f64)>,
    quads: Vec<[f64; 4]>,
}

fn draw(lo: f64, hi: f64, n: usize, seed: u64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at = move || lo + rng.random::<f64>() * (hi - lo);
    let pairs = (0..n).map(|_| (at(), at())).collect();
    let quads = (0..n)
        .map(|_| {
            let mut q = [0.0; 4];
            q.iter_mut().for_each(|x| *x = at());
            q.sort_by(f64::total_cmp);
            q
        })
        .collect();
    Points { pairs, quads }
}

fn max_over(pairs: &[(f64, f64)], f: impl Fn(f64, f64) -> Result<f64>) -> Result<f64> {
    pairs.iter().try_fold(0.0f64, |m, &(s, t)| Ok(m.max(f(s, t)?)))
}

/// Runs every identity that applies to the kernel's family on `n` random
/// points drawn from `seed`.
pub fn identity_suite(kernel: &Kernel, n: usize, gram_size: usize, seed: u64) -> Result<Vec<Check>> {
    let horizon = kernel.horizon();
    let lo = match kernel.family() {
        Family::Custom(g) => g.axis()[0],
        _ => 0.0,
    };
    let pts = draw(lo, horizon, n, seed);
    let mut checks = Vec::new();

    checks.push(Check::new(
        "symmetry",
        max_over(&pts.pairs, |s, t| {
            Ok((kernel.covariance(s, t)? - kernel.covariance(t, s)?).abs())
        })?,
        0.0,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let grid: Vec<f64> = (0..gram_size)
        .map(|_| lo + rng.random::<f64>() * (horizon - lo))
        .collect();
    let gram = DMatrix::from_fn(gram_size, gram_size, |i, j| {
        kernel.covariance(grid[i], grid[j]).unwrap_or(f64::NAN)
    });
    let trace = gram.trace();
    let min_eig = gram.symmetric_eigen().eigenvalues.min();
    checks.push(Check::new(
        "gram_min_eigenvalue_over_trace",
        (-min_eig / trace).max(0.0),
        1e-8,
    ));

    let bm = |s: f64, t: f64| s.min(t);
    let fbm_cov = |h: f64, s: f64, t: f64| 0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h));
    match *kernel.family() {
        Family::Fbm { hurst } => {
            checks.push(Check::new(
                "stationary_variance",
                max_over(&pts.pairs, |s, t| {
                    Ok((kernel.incremental_variance(s, t)? - (t - s).abs().powf(2.0 * hurst)).abs())
                })?,
                1e-12,
            ));
            if hurst == 0.5 {
                checks.push(Check::new(
                    "brownian_reduction",
                    max_over(&pts.pairs, |s, t| Ok((kernel.covariance(s, t)? - bm(s, t)).abs()))?,
                    1e-12,
                ));
            }
        }
        Family::SubFbm { hurst } => {
            if hurst == 0.5 {
                checks.push(Check::new(
                    "brownian_reduction",
                    max_over(&pts.pairs, |s, t| Ok((kernel.covariance(s, t)? - bm(s, t)).abs()))?,
                    1e-12,
                ));
            }
            let c = 2.0 - 2f64.powf(2.0 * hurst - 1.0);
            let (a, b) = if hurst < 0.5 { (1.0, c) } else { (c, 1.0) };
            checks.push(Check::new(
                "variance_sandwich",
                max_over(&pts.pairs, |s, t| {
                    let v = kernel.incremental_variance(s, t)?;
                    let e = (t - s).abs().powf(2.0 * hurst);
                    Ok((a * e - v).max(v - b * e).max(0.0))
                })?,
                1e-12,
            ));
        }
        Family::BiFbm { hurst, k } => {
            if k == 1.0 {
                checks.push(Check::new(
                    "unit_k_reduction",
                    max_over(&pts.pairs, |s, t| {
                        Ok((kernel.covariance(s, t)? - fbm_cov(hurst, s, t)).abs())
                    })?,
                    1e-12,
                ));
            } else {
                let d = Kernel::lei_nualart(hurst, k, horizon)?;
                let f = Kernel::fbm(hurst * k, horizon)?;
                let (a, b) = lei_nualart_constants(k);
                checks.push(Check::new(
                    "lei_nualart_residual",
                    max_over(&pts.pairs, |s, t| {
                        Ok((kernel.covariance(s, t)? + a * d.covariance(s, t)? - b * f.covariance(s, t)?).abs())
                    })?,
                    1e-10,
                ));
            }
            checks.push(Check::new(
                "variance_sandwich",
                max_over(&pts.pairs, |s, t| {
                    let v = kernel.incremental_variance(s, t)?;
                    let e = (t - s).abs().powf(2.0 * hurst * k);
                    Ok((2f64.powf(-k) * e - v).max(v - 2f64.powf(1.0 - k) * e).max(0.0))
                })?,
                1e-12,
            ));
        }
        _ => {}
    }

    if matches!(kernel.family(), Family::Fbm { .. } | Family::SubFbm { .. }) {
        let negative = kernel.sign_structure() == SignStructure::NegativeDisjointPositiveNested;
        let mut disjoint = 0usize;
        let mut nested = 0usize;
        // rounding floor; disjoint increments of the H = 1/2 members vanish exactly
        let floor = 1e-14 * kernel.incremental_variance(0.0, horizon)?;
        for x in &pts.quads {
            let dis = kernel.increment(x[0], x[1], x[2], x[3])?;
            if (negative && dis > floor) || (!negative && dis < -floor) {
                disjoint += 1;
            }
            if kernel.increment(x[0], x[3], x[1], x[2])? < -floor {
                nested += 1;
            }
        }
        checks.push(Check::new("disjoint_sign_violations", disjoint as f64, 0.0));
        checks.push(Check::new("nested_sign_violations", nested as f64, 0.0));
    }

    if kernel.local_variance().is_ok() {
        let widths: Vec<f64> = (3..12).map(|j| horizon * 0.5f64.powi(j)).collect();
        let anchors: Vec<f64> = (1..9).map(|i| horizon * 0.1 * i as f64).collect();
        let rep = verify_local_stationarity(kernel, 0.1 * horizon, &widths, &anchors)?;
        let value = if rep.decreasing { 0.0 } else { rep.sup };
        checks.push(Check::new("local_stationarity_nonincreasing", value, 0.0));
    }
    Ok(checks)
}
