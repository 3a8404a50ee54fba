//! Gaussian sampling of integral increments and process paths.
//!
//! Draws are keyed by `(seed, trial)`: the ChaCha20 generator is seeded with
//! `seed` and switched to stream `trial`, and the `i`-th normal of a draw is
//! read at a fixed position of that stream. Trials are therefore reproducible
//! in isolation, independently of execution order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrand::Integrand;
use crate::kernels::{Kernel, Rectangle};
use crate::partition::Partition;
use crate::rs_integral::double_integral;

/// Largest diagonal jitter, relative to the largest diagonal entry.
pub const MAX_RELATIVE_JITTER: f64 = 1e-8;

/// A mean-zero Gaussian vector given by a lower-triangular factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    chol: DMatrix<f64>,
    jitter: f64,
}

impl GaussianFactor {
    /// Cholesky factor of `m`, adding diagonal jitter `1e-14, 1e-13, ..., 1e-8`
    /// times the largest diagonal entry until the factorization succeeds.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::argument("covariance matrix must be square"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("covariance matrix has non-finite entries".into()));
        }
        let max_diag = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
        if max_diag <= 0.0 && m.iter().all(|&x| x == 0.0) {
            return Ok(GaussianFactor {
                chol: DMatrix::zeros(n, n),
                jitter: 0.0,
            });
        }
        if let Some(c) = nalgebra::Cholesky::new(m.clone()) {
            return Ok(GaussianFactor {
                chol: c.l(),
                jitter: 0.0,
            });
        }
        let mut rel = 1e-14;
        while rel <= MAX_RELATIVE_JITTER * (1.0 + 1e-9) {
            let jitter = rel * max_diag;
            let shifted = m + DMatrix::identity(n, n) * jitter;
            if let Some(c) = nalgebra::Cholesky::new(shifted) {
                return Ok(GaussianFactor { chol: c.l(), jitter });
            }
            rel *= 10.0;
        }
        Err(Error::Numerical(format!(
            "covariance matrix of size {n} is not positive definite even with jitter {:e}",
            MAX_RELATIVE_JITTER * max_diag
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// One draw `L z` for the generator keyed by `(seed, trial)`.
    pub fn sample(&self, seed: u64, trial: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)));
        (&self.chol * z).iter().copied().collect()
    }
}

/// Covariance of the increments of `Y = int f dX` over the cells of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementCovariance {
    partition: Partition,
    matrix: DMatrix<f64>,
    factor: GaussianFactor,
}

impl IncrementCovariance {
    /// Wraps an explicit matrix; `matrix` must be `m x m` for `m` cells.
    pub fn from_matrix(partition: Partition, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != partition.cells() {
            return Err(Error::Argument(format!(
                "matrix has {} rows for {} cells",
                matrix.nrows(),
                partition.cells()
            )));
        }
        let factor = GaussianFactor::new(&matrix)?;
        Ok(IncrementCovariance {
            partition,
            matrix,
            factor,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &GaussianFactor {
        &self.factor
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter
    }

    /// `M_i = sum_j |M_ij|`.
    pub fn row_abs_sums(&self) -> Vec<f64> {
        self.matrix
            .row_iter()
            .map(|row| row.iter().map(|x| x.abs()).sum())
            .collect()
    }

    /// Covariance of the sums over the cells of a coarser partition.
    pub fn aggregate(&self, coarse: &Partition) -> Result<DMatrix<f64>> {
        let blocks = self.partition.coarse_blocks(coarse)?;
        let n = blocks.len();
        Ok(DMatrix::from_fn(n, n, |a, b| {
            let mut s = 0.0;
            for i in blocks[a].clone() {
                for j in blocks[b].clone() {
                    s += self.matrix[(i, j)];
                }
            }
            s
        }))
    }
}

/// `M_ij = E[Delta_i Y Delta_j Y]` over the cells of `kappa`.
///
/// Constant `f` uses closed-form double increments; otherwise each entry is
/// integrated by parts with absolute tolerance `tol` times the entry scale
/// `sup|f|^2 sigma^2`. Entries are computed for `i <= j` and mirrored.
pub fn increment_cov_matrix(
    f: &Integrand,
    kernel: &Kernel,
    kappa: &Partition,
    tol: f64,
    exec: Execution,
) -> Result<IncrementCovariance> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tol = {tol} must be positive")));
    }
    let m = kappa.cells();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let scale = f.sup_norm().powi(2);
    let constant = f.is_constant().then(|| f.eval(0.0));
    let values = exec.try_map_range(pairs.len(), |idx| {
        let (i, j) = pairs[idx];
        let (a, b) = kappa.cell(i);
        let (c, d) = kappa.cell(j);
        let entry = match constant {
            Some(v) => kernel.increment(a, b, c, d).map(|x| v * v * x),
            None => Rectangle::new(a, b, c, d).and_then(|q| {
                let (lo, hi) = q.hull();
                let size = kernel.incremental_variance(lo, hi)? * scale;
                double_integral(f, f, kernel, &q, (tol * size).max(f64::MIN_POSITIVE))
            }),
        };
        entry.map_err(|e| Error::Entry {
            i,
            j,
            source: Box::new(e),
        })
    })?;
    let mut matrix = DMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        matrix[(i, j)] = v;
        matrix[(j, i)] = v;
    }
    IncrementCovariance::from_matrix(kappa.clone(), matrix)
}

/// One draw of `Delta Y` for `(seed, trial = 0)`.
pub fn sample_increments(cov: &IncrementCovariance, seed: u64) -> Vec<f64> {
    cov.factor.sample(seed, 0)
}

/// Sampler of `X` at the points of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSampler {
    points: Vec<f64>,
    // indices of points with positive variance; the others are pinned to 0
    active: Vec<usize>,
    factor: GaussianFactor,
}

impl PathSampler {
    pub fn new(kernel: &Kernel, kappa: &Partition) -> Result<Self> {
        let points = kappa.points().to_vec();
        let mut active = Vec::new();
        for (i, &t) in points.iter().enumerate() {
            if kernel.covariance(t, t)? > 0.0 {
                active.push(i);
            }
        }
        let n = active.len();
        let mut gram = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let g = kernel.covariance(points[active[a]], points[active[b]])?;
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        Ok(PathSampler {
            points,
            active,
            factor: GaussianFactor::new(&gram)?,
        })
    }

    pub fn sample(&self, seed: u64, trial: u64) -> Vec<f64> {
        let draw = self.factor.sample(seed, trial);
        let mut path = vec![0.0; self.points.len()];
        for (k, &i) in self.active.iter().enumerate() {
            path[i] = draw[k];
        }
        path
    }
}

/// `X(t_0), ..., X(t_m)` for a single seed.
pub fn sample_path(kernel: &Kernel, kappa: &Partition, seed: u64) -> Result<Vec<f64>> {
    Ok(PathSampler::new(kernel, kappa)?.sample(seed, 0))
}
