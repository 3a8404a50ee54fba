use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly increasing finite grid `t_0 < t_1 < ... < t_m` of an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::argument("a partition needs at least two points"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::argument("partition points must be finite"));
        }
        if let Some(w) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Argument(format!(
                "partition points must be strictly increasing (index {} -> {})",
                w,
                w + 1
            )));
        }
        Ok(Partition { points })
    }

    /// `m` equal cells on `[a, b]`. Interior points are `a + i (b - a) / m`; the
    /// last point is `b` exactly.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m == 0 || b <= a {
            return Err(Error::argument("uniform partition needs m >= 1 and a < b"));
        }
        let h = (b - a) / m as f64;
        let mut points: Vec<f64> = (0..m).map(|i| a + i as f64 * h).collect();
        points.push(b);
        Partition::new(points)
    }

    /// The dyadic partition of `[0, horizon]` into `2^level` cells.
    pub fn dyadic(horizon: f64, level: u32) -> Result<Self> {
        Partition::uniform(0.0, horizon, 1usize << level)
    }

    /// `m` cells of `[0, horizon]` with interior points drawn uniformly at random.
    pub fn random<R: Rng + ?Sized>(horizon: f64, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::argument("random partition needs m >= 1"));
        }
        loop {
            let mut interior: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>() * horizon).collect();
            interior.sort_by(f64::total_cmp);
            let mut points = Vec::with_capacity(m + 1);
            points.push(0.0);
            points.extend(interior);
            points.push(horizon);
            if let Ok(p) = Partition::new(points) {
                return Ok(p);
            }
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Number of cells `m`.
    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    /// Endpoints of cell `i` (zero-based).
    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.points[i], self.points[i + 1])
    }

    pub fn widths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn mesh(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// True when every point of `coarse` is a point of `self`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        let mut it = self.points.iter();
        coarse.points.iter().all(|c| it.any(|p| p == c))
    }

    /// For each cell of `coarse`, the range of fine cell indices it contains.
    /// Requires `self.refines(coarse)`.
    pub fn coarse_blocks(&self, coarse: &Partition) -> Result<Vec<std::ops::Range<usize>>> {
        if !self.refines(coarse) {
            return Err(Error::argument("partition is not a refinement of the coarse partition"));
        }
        let mut blocks = Vec::with_capacity(coarse.cells());
        let mut idx = 0;
        for w in coarse.points.windows(2) {
            while self.points[idx] != w[0] {
                idx += 1;
            }
            let start = idx;
            while self.points[idx] != w[1] {
                idx += 1;
            }
            blocks.push(start..idx);
        }
        Ok(blocks)
    }

    /// Merges in the given extra points (those strictly inside the interval).
    pub fn with_points(&self, extra: &[f64]) -> Partition {
        let (a, b) = (self.start(), self.end());
        let mut points = self.points.clone();
        points.extend(extra.iter().copied().filter(|&x| x > a && x < b));
        points.sort_by(f64::total_cmp);
        points.dedup();
        Partition { points }
    }
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Partition::new(points)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.points
    }
}
