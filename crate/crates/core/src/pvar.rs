//! p-variation of one-variable functions and of covariance surfaces.
//!
//! One-dimensional variation over sample points is exact (dynamic
//! programming over sub-partitions). For surfaces the supremum is taken over
//! product sub-grids of a supplied grid; the result is a bracket whose lower
//! end is witnessed by a concrete partition and whose upper end comes from a
//! certified bound of the kernel family.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernels::{lei_nualart_constants, Family, Kernel, Rectangle, SignStructure};
use crate::partition::Partition;

/// Largest axis size accepted by exhaustive enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Grid size used by [`vp_rect`] for witnessed lower bounds.
pub const REFINEMENT_POINTS: usize = 12;

/// Number of randomized restarts of the greedy search.
pub const GREEDY_RESTARTS: usize = 50;

// relative slack under which two sums count as equal when picking witnesses
const TIE: f64 = 1e-12;

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("p = {p}: p-variation requires 1 <= p < inf")))
    }
}

/// Exact one-dimensional p-variation over the sample points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pvar1d {
    /// `V_p = s_p^{1/p}`.
    pub value: f64,
    /// The maximal `s_p`.
    pub sum: f64,
    /// Indices of the optimal sub-partition, lexicographically smallest among ties.
    pub witness: Vec<usize>,
}

/// `sup [s_p(f; kappa)]^{1/p}` over partitions drawn from the sample times.
pub fn pvar_1d(samples: &[(f64, f64)], p: f64) -> Result<Pvar1d> {
    check_p(p)?;
    if samples.len() < 2 {
        return Err(Error::argument("p-variation needs at least two samples"));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::argument("sample times must be strictly increasing"));
    }
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (sum, witness) = variation_dp(&values, p);
    Ok(Pvar1d {
        value: sum.powf(1.0 / p),
        sum,
        witness,
    })
}

/// Optimal `s_p` over sub-sequences from the first to the last value, with
/// the lexicographically smallest optimal index sequence.
pub(crate) fn variation_dp(values: &[f64], p: f64) -> (f64, Vec<usize>) {
    let n = values.len();
    let mut best = vec![0.0f64; n];
    let mut next = vec![n - 1; n];
    for i in (0..n - 1).rev() {
        let mut top = f64::NEG_INFINITY;
        for j in i + 1..n {
            let cand = (values[j] - values[i]).abs().powf(p) + best[j];
            if cand > top {
                top = cand;
                next[i] = j;
            }
        }
        best[i] = top;
    }
    let mut witness = vec![0];
    let mut i = 0;
    while i != n - 1 {
        i = next[i];
        witness.push(i);
    }
    (best[0], witness)
}

/// Values of a function on a product grid `s x t`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    s: Vec<f64>,
    t: Vec<f64>,
    values: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(s: Vec<f64>, t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        for axis in [&s, &t] {
            if axis.len() < 2 || axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::argument(
                    "grid axes need at least two strictly increasing points",
                ));
            }
        }
        if values.len() != s.len() * t.len() {
            return Err(Error::Argument(format!(
                "grid has {} values, expected {} x {}",
                values.len(),
                s.len(),
                t.len()
            )));
        }
        Ok(SurfaceGrid { s, t, values })
    }

    pub fn from_fn(s: Vec<f64>, t: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = s
            .iter()
            .flat_map(|&x| t.iter().map(move |&y| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        SurfaceGrid::new(s, t, values)
    }

    /// Covariance of `kernel` on the grid.
    pub fn from_kernel(kernel: &Kernel, s: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(s.len() * t.len());
        for &x in &s {
            for &y in &t {
                values.push(kernel.covariance(x, y)?);
            }
        }
        SurfaceGrid::new(s, t, values)
    }

    pub fn rows(&self) -> usize {
        self.s.len()
    }

    pub fn cols(&self) -> usize {
        self.t.len()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t.len() + j]
    }

    /// `s_p` of the sub-grid with the given row and column indices.
    pub fn power_sum(&self, rows: &[usize], cols: &[usize], p: f64) -> f64 {
        let mut total = 0.0;
        for r in rows.windows(2) {
            for c in cols.windows(2) {
                let inc = self.at(r[1], c[1]) - self.at(r[0], c[1]) - self.at(r[1], c[0]) + self.at(r[0], c[0]);
                total += inc.abs().powf(p);
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    Greedy,
}

/// A product partition `s x t` of a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridWitness {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

/// Two-sided enclosure of a p-variation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvarBracket {
    /// Attained by `witness`.
    pub lower: f64,
    /// Certified bound; `inf` when no bound is available.
    pub upper: f64,
    pub exact: bool,
    pub witness: GridWitness,
}

fn better(cand: f64, cand_key: (&[usize], &[usize]), best: f64, best_key: (&[usize], &[usize])) -> bool {
    let slack = TIE * best.abs().max(cand.abs());
    if cand > best + slack {
        true
    } else if cand >= best - slack {
        cand_key < best_key
    } else {
        false
    }
}

/// p-variation of a surface restricted to product sub-grids of `grid`.
///
/// `Exhaustive` returns the exact grid-restricted supremum (`exact = true`,
/// `lower = upper`). `Greedy` returns a witnessed lower bound with
/// `upper = inf`. Near-equal sums (relative `1e-12`) count as ties and
/// resolve to the lexicographically smallest `(rows, cols)`.
pub fn pvar_2d(grid: &SurfaceGrid, p: f64, mode: SearchMode, exec: Execution) -> Result<PvarBracket> {
    check_p(p)?;
    let (rows, cols, sum) = match mode {
        SearchMode::Exhaustive => exhaustive(grid, p, exec)?,
        SearchMode::Greedy => greedy(grid, p, GREEDY_RESTARTS, 0, exec),
    };
    let lower = sum.powf(1.0 / p);
    let witness = GridWitness {
        s: rows.iter().map(|&i| grid.s[i]).collect(),
        t: cols.iter().map(|&j| grid.t[j]).collect(),
    };
    Ok(match mode {
        SearchMode::Exhaustive => PvarBracket {
            lower,
            upper: lower,
            exact: true,
            witness,
        },
        SearchMode::Greedy => PvarBracket {
            lower,
            upper: f64::INFINITY,
            exact: false,
            witness,
        },
    })
}

fn mask_indices(mask: u64, n: usize) -> Vec<usize> {
    let mut idx = vec![0];
    idx.extend((1..n - 1).filter(|i| mask & (1 << (i - 1)) != 0));
    idx.push(n - 1);
    idx
}

fn exhaustive(grid: &SurfaceGrid, p: f64, exec: Execution) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    let (n, m) = (grid.rows(), grid.cols());
    let largest = n.max(m);
    if largest > EXHAUSTIVE_LIMIT {
        return Err(Error::Size {
            points: largest,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let subsets = 1usize << (n - 2);
    let results = exec.map_range(subsets, |mask| {
        let rows = mask_indices(mask as u64, n);
        // row differences per selected row pair, then an exact column DP
        let diffs: Vec<Vec<f64>> = rows
            .windows(2)
            .map(|r| (0..m).map(|c| grid.at(r[1], c) - grid.at(r[0], c)).collect())
            .collect();
        let (sum, cols) = column_dp(&diffs, m, p);
        (rows, cols, sum)
    });
    let mut iter = results.into_iter();
    let mut best = iter.next().expect("at least one row subset");
    for cand in iter {
        if better(cand.2, (&cand.0, &cand.1), best.2, (&best.0, &best.1)) {
            best = cand;
        }
    }
    Ok(best)
}

fn column_dp(diffs: &[Vec<f64>], m: usize, p: f64) -> (f64, Vec<usize>) {
    let mut best = vec![0.0f64; m];
    let mut next = vec![m - 1; m];
    for c in (0..m - 1).rev() {
        let mut top = f64::NEG_INFINITY;
        for c2 in c + 1..m {
            let w: f64 = diffs.iter().map(|d| (d[c2] - d[c]).abs().powf(p)).sum();
            let cand = w + best[c2];
            // scanning c2 upward: strict improvement beyond the tie slack is
            // needed to move to a later (lexicographically larger) index
            if cand > top + TIE * top.abs().max(cand.abs()) || top == f64::NEG_INFINITY {
                top = cand;
                next[c] = c2;
            }
        }
        best[c] = top;
    }
    let mut cols = vec![0];
    let mut c = 0;
    while c != m - 1 {
        c = next[c];
        cols.push(c);
    }
    (best[0], cols)
}

fn greedy(grid: &SurfaceGrid, p: f64, restarts: usize, seed: u64, exec: Execution) -> (Vec<usize>, Vec<usize>, f64) {
    let (n, m) = (grid.rows(), grid.cols());
    let results = exec.map_range(restarts + 1, |start| {
        let (mut rmask, mut cmask) = (vec![true; n], vec![true; m]);
        if start > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start as u64);
            for v in rmask[1..n - 1].iter_mut().chain(cmask[1..m - 1].iter_mut()) {
                *v = rng.random_bool(0.5);
            }
        }
        local_search(grid, p, rmask, cmask)
    });
    let mut iter = results.into_iter();
    let mut best = iter.next().expect("full-grid start");
    for cand in iter {
        if better(cand.2, (&cand.0, &cand.1), best.2, (&best.0, &best.1)) {
            best = cand;
        }
    }
    best
}

fn local_search(
    grid: &SurfaceGrid,
    p: f64,
    mut rmask: Vec<bool>,
    mut cmask: Vec<bool>,
) -> (Vec<usize>, Vec<usize>, f64) {
    let idx = |mask: &[bool]| -> Vec<usize> { (0..mask.len()).filter(|&i| mask[i]).collect() };
    let mut current = grid.power_sum(&idx(&rmask), &idx(&cmask), p);
    let (n, m) = (rmask.len(), cmask.len());
    let mut lines: Vec<(bool, usize)> = (1..n - 1)
        .map(|i| (true, i))
        .chain((1..m - 1).map(|j| (false, j)))
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(n as u64 * 7919 + m as u64);
    loop {
        let mut improved = false;
        lines.shuffle(&mut order_rng);
        for &(is_row, i) in &lines {
            let mask = if is_row { &mut rmask } else { &mut cmask };
            mask[i] = !mask[i];
            let cand = grid.power_sum(&idx(&rmask), &idx(&cmask), p);
            if cand > current * (1.0 + TIE) + f64::MIN_POSITIVE {
                current = cand;
                improved = true;
            } else {
                let mask = if is_row { &mut rmask } else { &mut cmask };
                mask[i] = !mask[i];
            }
        }
        if !improved {
            break;
        }
    }
    (idx(&rmask), idx(&cmask), current)
}

fn uniform_axis(a: f64, b: f64, points: usize) -> Vec<f64> {
    let mut axis: Vec<f64> = (0..points - 1)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect();
    axis.push(b);
    axis
}

/// Bracket for `V_p(Gamma; Q)`.
///
/// Exact when every double increment inside `Q` has the same sign: positively
/// correlated disjoint increments (any `Q`), or negatively correlated ones on
/// rectangles whose sides overlap in at most a point. Otherwise the lower end
/// is the grid-restricted supremum on a uniform refinement and the upper end
/// is the family's diagonal bound `C_1 |hull|^{2 gamma}`, valid for `p` at
/// least the kernel's variation index.
pub fn vp_rect(kernel: &Kernel, q: &Rectangle, p: f64, exec: Execution) -> Result<PvarBracket> {
    check_p(p)?;
    let value = kernel.rect_increment(q)?.abs();
    let trivial = GridWitness {
        s: vec![q.a, q.b],
        t: vec![q.c, q.d],
    };
    let exact = |v: f64| PvarBracket {
        lower: v,
        upper: v,
        exact: true,
        witness: trivial.clone(),
    };
    let sign = kernel.sign_structure();
    match sign {
        SignStructure::PositiveDisjoint => return Ok(exact(value)),
        SignStructure::NegativeDisjointPositiveNested if q.is_off_diagonal() => return Ok(exact(value)),
        _ => {}
    }
    let grid = SurfaceGrid::from_kernel(
        kernel,
        uniform_axis(q.a, q.b, REFINEMENT_POINTS),
        uniform_axis(q.c, q.d, REFINEMENT_POINTS),
    )?;
    let mode = if sign == SignStructure::Unknown {
        SearchMode::Greedy
    } else {
        SearchMode::Exhaustive
    };
    let mut bracket = pvar_2d(&grid, p, mode, exec)?;
    bracket.exact = false;
    if bracket.lower < value {
        bracket.lower = value;
        bracket.witness = trivial;
    }
    bracket.upper = upper_bound(kernel, q, p)?;
    Ok(bracket)
}

/// Upper bound for `V_1(Gamma; Q)` on a rectangle whose sides overlap in at
/// most a point, when one is available without a grid search.
pub(crate) fn off_diagonal_v1(kernel: &Kernel, q: &Rectangle) -> Result<Option<f64>> {
    if !q.is_off_diagonal() {
        return Ok(None);
    }
    match (kernel.sign_structure(), kernel.family()) {
        (SignStructure::PositiveDisjoint | SignStructure::NegativeDisjointPositiveNested, _) => {
            Ok(Some(kernel.rect_increment(q)?.abs()))
        }
        (_, Family::BiFbm { hurst, k }) if *k < 1.0 => {
            // V_p(C) <= A V_1(D) + B V_1(F_HK), both exact off the diagonal
            let (a, b) = lei_nualart_constants(*k);
            let horizon = kernel.horizon();
            let d = Kernel::lei_nualart(*hurst, *k, horizon)?.rect_increment(q)?;
            let f = Kernel::fbm(hurst * k, horizon)?.rect_increment(q)?;
            Ok(Some(a * d.abs() + b * f.abs()))
        }
        _ => Ok(None),
    }
}

fn upper_bound(kernel: &Kernel, q: &Rectangle, p: f64) -> Result<f64> {
    if matches!(kernel.family(), Family::BiFbm { k, .. } if *k < 1.0) {
        if let Some(v) = off_diagonal_v1(kernel, q)? {
            return Ok(v);
        }
    }
    match (kernel.diagonal_constant(), kernel.orey_index(), kernel.p()) {
        (Some(c1), Some(gamma), Some(kp)) if p >= kp => {
            let (lo, hi) = q.hull();
            Ok(c1 * (hi - lo).powf(2.0 * gamma))
        }
        _ => Ok(f64::INFINITY),
    }
}

/// Row-sum check `sum_j |E[Delta_i X Delta_j X]| <= C_2 Delta_i^{1 ∧ 2 gamma}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowSum {
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Row sum of absolute increment covariances for cell `i` (zero-based) of `kappa`.
///
/// `holds` allows a relative slack of `1e-12` for round-off in cases where
/// the bound is attained, such as Brownian motion.
pub fn row_sum_bound(kernel: &Kernel, kappa: &Partition, i: usize) -> Result<RowSum> {
    if i >= kappa.cells() {
        return Err(Error::Argument(format!(
            "cell index {i} out of range for {} cells",
            kappa.cells()
        )));
    }
    let (c2, gamma) = match (kernel.row_sum_constant(), kernel.orey_index()) {
        (Some(c), Some(g)) => (c, g),
        _ => {
            return Err(Error::Unsupported(format!(
                "no published row-sum constant for {}",
                kernel.name()
            )))
        }
    };
    let (a, b) = kappa.cell(i);
    let mut value = 0.0;
    for j in 0..kappa.cells() {
        let (c, d) = kappa.cell(j);
        value += kernel.increment(a, b, c, d)?.abs();
    }
    let bound = c2 * (b - a).powf((2.0 * gamma).min(1.0));
    Ok(RowSum {
        value,
        bound,
        holds: value <= bound * (1.0 + 1e-12),
    })
}
