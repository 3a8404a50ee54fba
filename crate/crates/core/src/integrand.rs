//! Regulated deterministic integrands represented as right-continuous
//! piecewise polynomials of degree at most three.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pvar::variation_dp;
use crate::special;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 3;

/// A polynomial piece starting at `break_start`, with coefficients in the
/// global variable: `f(x) = coeffs[0] + coeffs[1] x + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub break_start: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    pub fn new(break_start: f64, coeffs: Vec<f64>) -> Self {
        Piece { break_start, coeffs }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + k as f64 * c;
        }
        acc
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }

    /// Zeros of the derivative strictly inside `(a, b)`, ascending.
    fn critical_points(&self, a: f64, b: f64) -> Vec<f64> {
        let c = |k: usize| self.coeffs.get(k).copied().unwrap_or(0.0);
        // f'(x) = c1 + 2 c2 x + 3 c3 x^2
        let (qa, qb, qc) = (3.0 * c(3), 2.0 * c(2), c(1));
        let mut roots = Vec::new();
        if qa == 0.0 {
            if qb != 0.0 {
                roots.push(-qc / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // numerically stable pair
                let t = -0.5 * (qb + qb.signum() * sq);
                if t != 0.0 {
                    roots.push(t / qa);
                    roots.push(qc / t);
                } else {
                    roots.push(0.0);
                }
            }
        }
        roots.retain(|&x| x > a && x < b);
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }
}

/// A right-continuous piecewise polynomial on `[0, T]`; the last piece
/// includes `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Integrand {
    pieces: Vec<Piece>,
    horizon: f64,
}

impl Integrand {
    pub fn new(pieces: Vec<Piece>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter {
                name: "T",
                value: horizon,
                reason: "horizon must be positive and finite",
            });
        }
        let first = pieces
            .first()
            .ok_or_else(|| Error::argument("integrand needs at least one piece"))?;
        if first.break_start != 0.0 {
            return Err(Error::argument("the first integrand piece must start at 0"));
        }
        if pieces.windows(2).any(|w| w[1].break_start <= w[0].break_start) {
            return Err(Error::argument("integrand breakpoints must be strictly increasing"));
        }
        if pieces.last().is_some_and(|p| p.break_start >= horizon) {
            return Err(Error::argument("integrand breakpoints must lie in [0, T)"));
        }
        for piece in &pieces {
            if piece.coeffs.is_empty() || piece.coeffs.len() > MAX_DEGREE + 1 {
                return Err(Error::Argument(format!(
                    "piece at {} has {} coefficients; 1 to {} are supported",
                    piece.break_start,
                    piece.coeffs.len(),
                    MAX_DEGREE + 1
                )));
            }
            if piece.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::argument("integrand coefficients must be finite"));
            }
        }
        Ok(Integrand { pieces, horizon })
    }

    pub fn constant(c: f64, horizon: f64) -> Result<Self> {
        Integrand::new(vec![Piece::new(0.0, vec![c])], horizon)
    }

    pub fn polynomial(coeffs: Vec<f64>, horizon: f64) -> Result<Self> {
        Integrand::new(vec![Piece::new(0.0, coeffs)], horizon)
    }

    /// Step function taking `values[k]` on `[starts[k], starts[k+1])`.
    pub fn step(starts: &[f64], values: &[f64], horizon: f64) -> Result<Self> {
        if starts.len() != values.len() {
            return Err(Error::argument("step function needs one value per start"));
        }
        let pieces = starts
            .iter()
            .zip(values)
            .map(|(&s, &v)| Piece::new(s, vec![v]))
            .collect();
        Integrand::new(pieces, horizon)
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Interior breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.break_start).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.len() == 1 && self.pieces[0].is_constant()
    }

    /// Every piece is constant (a step function).
    pub fn is_step(&self) -> bool {
        self.pieces.iter().all(Piece::is_constant)
    }

    /// Interval covered by piece `k`.
    pub fn piece_interval(&self, k: usize) -> (f64, f64) {
        let end = self.pieces.get(k + 1).map_or(self.horizon, |p| p.break_start);
        (self.pieces[k].break_start, end)
    }

    fn piece_index(&self, x: f64) -> usize {
        self.pieces.partition_point(|p| p.break_start <= x).saturating_sub(1)
    }

    /// `f(x)`, right-continuous.
    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].eval(x)
    }

    /// `f(x-)`; equals `f(0)` at zero.
    pub fn left_limit(&self, x: f64) -> f64 {
        let k = self.pieces.partition_point(|p| p.break_start < x).saturating_sub(1);
        self.pieces[k].eval(x)
    }

    /// Multiplies the function by `c`.
    pub fn scaled(&self, c: f64) -> Integrand {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece::new(p.break_start, p.coeffs.iter().map(|a| a * c).collect()))
            .collect();
        Integrand {
            pieces,
            horizon: self.horizon,
        }
    }

    /// Restriction of the pieces to `[a, b]`: `(lo, hi, piece)` triples in order.
    pub fn segments(&self, a: f64, b: f64) -> Vec<(f64, f64, &Piece)> {
        let mut out = Vec::new();
        for k in 0..self.pieces.len() {
            let (lo, hi) = self.piece_interval(k);
            let (lo, hi) = (lo.max(a), hi.min(b));
            if lo < hi {
                out.push((lo, hi, &self.pieces[k]));
            }
        }
        out
    }

    /// Values whose successive differences realize the variation on `[a, b]`:
    /// for each piece its start value, interior extrema and left limit at its end.
    fn turning_values(&self, a: f64, b: f64) -> Vec<f64> {
        let mut vals = Vec::new();
        for (lo, hi, piece) in self.segments(a, b) {
            vals.push(piece.eval(lo));
            vals.extend(piece.critical_points(lo, hi).into_iter().map(|x| piece.eval(x)));
            vals.push(piece.eval(hi));
        }
        // the right endpoint takes the value of the piece it belongs to
        if b < self.horizon {
            vals.push(self.eval(b));
        }
        vals
    }

    /// `V_q(f; [0, T])`, exact.
    pub fn q_variation(&self, q: f64) -> Result<f64> {
        self.q_variation_on(0.0, self.horizon, q)
    }

    /// `V_q(f; [a, b])` for `0 <= a < b <= T`, exact.
    pub fn q_variation_on(&self, a: f64, b: f64, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::Argument(format!("q = {q}: variation requires q >= 1")));
        }
        if !(0.0 <= a && a < b && b <= self.horizon) {
            return Err(Error::Argument(format!(
                "[{a}, {b}] is not a subinterval of [0, {}]",
                self.horizon
            )));
        }
        let vals = self.turning_values(a, b);
        let (sum, _) = variation_dp(&vals, q);
        Ok(sum.powf(1.0 / q))
    }

    /// `sup |f|` over `[0, T]`, one-sided limits included.
    pub fn sup_norm(&self) -> f64 {
        self.turning_values(0.0, self.horizon)
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||f||_{[q]} = ||f||_sup + V_q(f)`.
    pub fn q_norm(&self, q: f64) -> Result<f64> {
        Ok(self.sup_norm() + self.q_variation(q)?)
    }

    /// `int_0^T |f|^r`, splitting each piece at its real roots.
    pub fn integral_abs_pow(&self, r: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.pieces.len() {
            let (a, b) = self.piece_interval(k);
            let piece = &self.pieces[k];
            if piece.is_constant() {
                total += piece.coeffs[0].abs().powf(r) * (b - a);
                continue;
            }
            let mut cuts = vec![a];
            cuts.extend(piece.critical_points(a, b));
            cuts.push(b);
            let mut nodes = vec![a];
            for w in cuts.windows(2) {
                if let Some(root) = monotone_root(piece, w[0], w[1]) {
                    nodes.push(root);
                }
                nodes.push(w[1]);
            }
            for w in nodes.windows(2) {
                // monotone on the window, so the endpoints carry the sup
                let s = piece.eval(w[0]).abs().max(piece.eval(w[1]).abs());
                if s > 0.0 {
                    let unit = special::integrate(|x| (piece.eval(x) / s).abs().powf(r), w[0], w[1], 1e-13);
                    total += s.powf(r) * unit;
                }
            }
        }
        total
    }
}

// root of a polynomial that is monotone on [a, b], if it changes sign there
fn monotone_root(piece: &Piece, a: f64, b: f64) -> Option<f64> {
    let (fa, fb) = (piece.eval(a), piece.eval(b));
    if fa == 0.0 || fb == 0.0 || fa.signum() == fb.signum() {
        return None;
    }
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if piece.eval(mid).signum() == fa.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
