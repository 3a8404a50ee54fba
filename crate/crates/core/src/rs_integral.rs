//! Double Riemann-Stieltjes sums against covariance surfaces and second
//! moments of quadratic-mean integrals.
//!
//! Two independent routes compute `E[int_a^b f dX int_c^d g dX]`:
//! [`qm_moment`] refines left-tagged double Riemann-Stieltjes sums over
//! dyadic grids until consecutive levels agree, while [`double_integral`]
//! integrates by parts on each polynomial piece and evaluates the remaining
//! smooth integrals of the double increment by adaptive Gauss-Legendre
//! quadrature. The second route is exact for step functions and converges
//! quickly for polynomial pieces, where Riemann-Stieltjes sums over a kernel
//! of index `gamma` only improve like `mesh^{2 gamma}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrand::{Integrand, Piece};
use crate::kernels::{Kernel, Rectangle};
use crate::partition::Partition;
use crate::pvar::vp_rect;
use crate::special::{self, zeta};

/// Axis partitions `(s_i)`, `(t_j)` with one tag per cell on each axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedPartition2D {
    s: Partition,
    t: Partition,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Tag placement inside each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tagging {
    #[default]
    Left,
    Midpoint,
}

fn tags(p: &Partition, tagging: Tagging) -> Vec<f64> {
    p.points()
        .windows(2)
        .map(|w| match tagging {
            Tagging::Left => w[0],
            Tagging::Midpoint => 0.5 * (w[0] + w[1]),
        })
        .collect()
}

impl TaggedPartition2D {
    pub fn new(s: Partition, t: Partition, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != s.cells() || v.len() != t.cells() {
            return Err(Error::argument("one tag per cell is required on each axis"));
        }
        for (p, tags) in [(&s, &u), (&t, &v)] {
            for (i, &x) in tags.iter().enumerate() {
                let (lo, hi) = p.cell(i);
                if !(lo <= x && x <= hi) {
                    return Err(Error::Argument(format!("tag {x} lies outside its cell [{lo}, {hi}]")));
                }
            }
        }
        Ok(TaggedPartition2D { s, t, u, v })
    }

    pub fn with_tagging(s: Partition, t: Partition, tagging: Tagging) -> Self {
        let (u, v) = (tags(&s, tagging), tags(&t, tagging));
        TaggedPartition2D { s, t, u, v }
    }

    pub fn left(s: Partition, t: Partition) -> Self {
        TaggedPartition2D::with_tagging(s, t, Tagging::Left)
    }

    pub fn s(&self) -> &Partition {
        &self.s
    }

    pub fn t(&self) -> &Partition {
        &self.t
    }
}

/// `sum_i sum_j f(u_i) g(v_j) Delta_ij Gamma`.
pub fn double_rs_sum(f: &Integrand, g: &Integrand, kernel: &Kernel, tau: &TaggedPartition2D) -> Result<f64> {
    rs_sum(f, g, kernel, tau, Execution::Sequential)
}

fn rs_sum(f: &Integrand, g: &Integrand, kernel: &Kernel, tau: &TaggedPartition2D, exec: Execution) -> Result<f64> {
    for x in [tau.s.start(), tau.s.end(), tau.t.start(), tau.t.end()] {
        kernel.covariance(x, x)?;
    }
    let fu: Vec<f64> = tau.u.iter().map(|&x| f.eval(x)).collect();
    let gv: Vec<f64> = tau.v.iter().map(|&y| g.eval(y)).collect();
    let sp = tau.s.points();
    let tp = tau.t.points();
    let rows = exec.map_range(fu.len(), |i| {
        if fu[i] == 0.0 {
            return 0.0;
        }
        let mut row = 0.0;
        for j in 0..gv.len() {
            if gv[j] != 0.0 {
                row += gv[j] * kernel.increment_unchecked(sp[i], sp[i + 1], tp[j], tp[j + 1]);
            }
        }
        fu[i] * row
    });
    Ok(rows.iter().sum())
}

/// Controls for [`qm_moment_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmOptions {
    /// Finest dyadic level attempted.
    pub max_levels: usize,
    pub tagging: Tagging,
    pub exec: Execution,
}

impl Default for QmOptions {
    fn default() -> Self {
        QmOptions {
            max_levels: 14,
            tagging: Tagging::Left,
            exec: Execution::default(),
        }
    }
}

/// A converged refinement sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QmMoment {
    pub value: f64,
    /// Level at which consecutive sums first agreed to `tol`.
    pub levels: usize,
    /// Riemann-Stieltjes sum at levels `0..=levels`.
    pub trace: Vec<f64>,
}

/// `E[int_a^b f dX int_c^d f dX]` for `Q = [a, b] x [c, d]` by dyadic
/// refinement of tagged double sums, with `f`'s breakpoints inserted in
/// every grid.
pub fn qm_moment(f: &Integrand, kernel: &Kernel, q: &Rectangle, tol: f64) -> Result<QmMoment> {
    qm_moment_with(f, kernel, q, tol, &QmOptions::default())
}

pub fn qm_moment_with(f: &Integrand, kernel: &Kernel, q: &Rectangle, tol: f64, opts: &QmOptions) -> Result<QmMoment> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tol = {tol} must be positive")));
    }
    let breaks = f.breakpoints();
    let mut trace = Vec::new();
    for level in 0..=opts.max_levels {
        let cells = 1usize << level;
        let s = Partition::uniform(q.a, q.b, cells)?.with_points(&breaks);
        let t = Partition::uniform(q.c, q.d, cells)?.with_points(&breaks);
        let tau = TaggedPartition2D::with_tagging(s, t, opts.tagging);
        let sum = rs_sum(f, f, kernel, &tau, opts.exec)?;
        trace.push(sum);
        if level > 0 && (sum - trace[level - 1]).abs() < tol {
            return Ok(QmMoment {
                value: sum,
                levels: level,
                trace,
            });
        }
    }
    let n = trace.len();
    Err(Error::Convergence {
        levels: opts.max_levels,
        previous: trace[n - 2],
        last: trace[n - 1],
    })
}

/// `E[int_a^b f dX int_c^d g dX] = int int f (x) g d^2 Gamma` over `Q` by
/// integration by parts on each pair of polynomial pieces.
///
/// With `P` on `[c0, d0]` and `R` on `[e0, g0]` the pair contributes
/// `P(d0) R(g0) D(d0, g0) - P(d0) int R'(y) D(d0, y) dy
///  - R(g0) int P'(x) D(x, g0) dx + int int P'(x) R'(y) D(x, y) dx dy`,
/// where `D(x, y)` is the double increment over `[c0, x] x [e0, y]`.
/// `tol` is an absolute tolerance for the whole value.
pub fn double_integral(f: &Integrand, g: &Integrand, kernel: &Kernel, q: &Rectangle, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tol = {tol} must be positive")));
    }
    for x in [q.a, q.b, q.c, q.d] {
        kernel.covariance(x, x)?;
    }
    let fs = f.segments(q.a, q.b);
    let gs = g.segments(q.c, q.d);
    let share = tol / (fs.len() * gs.len()) as f64;
    let mut total = 0.0;
    for &(c0, d0, p) in &fs {
        for &(e0, g0, r) in &gs {
            total += piece_pair(kernel, (c0, d0, p), (e0, g0, r), share);
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numerical("double integral is not finite".into()))
    }
}

fn splits(lo: f64, hi: f64, candidates: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = candidates.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(hi);
    pts
}

fn integrate_split(f: impl Fn(f64) -> f64, pts: &[f64], tol: f64) -> f64 {
    let share = tol / (pts.len() - 1) as f64;
    pts.windows(2).map(|w| special::integrate(&f, w[0], w[1], share)).sum()
}

fn piece_pair(kernel: &Kernel, (c0, d0, p): (f64, f64, &Piece), (e0, g0, r): (f64, f64, &Piece), tol: f64) -> f64 {
    let inc = |x: f64, y: f64| kernel.increment_unchecked(c0, x, e0, y);
    let (pd, rg) = (p.eval(d0), r.eval(g0));
    let mut total = pd * rg * inc(d0, g0);
    let tol = 0.25 * tol;
    if !r.is_constant() {
        let pts = splits(e0, g0, &[c0, d0]);
        total -= pd * integrate_split(|y| r.derivative(y) * inc(d0, y), &pts, tol / pd.abs().max(1.0));
    }
    if !p.is_constant() {
        let pts = splits(c0, d0, &[e0, g0]);
        total -= rg * integrate_split(|x| p.derivative(x) * inc(x, g0), &pts, tol / rg.abs().max(1.0));
    }
    if !p.is_constant() && !r.is_constant() {
        let outer = splits(c0, d0, &[e0, g0]);
        let inner_tol = tol / (d0 - c0).max(1e-300) * 0.1;
        let slope = |x: f64| {
            let pts = splits(e0, g0, &[x, c0, d0]);
            p.derivative(x) * integrate_split(|y| r.derivative(y) * inc(x, y), &pts, inner_tol)
        };
        total += integrate_split(slope, &outer, tol);
    }
    total
}

/// `E[int_a^b f dX int_c^d f dX]` by integration by parts.
pub fn qm_moment_by_parts(f: &Integrand, kernel: &Kernel, q: &Rectangle, tol: f64) -> Result<f64> {
    double_integral(f, f, kernel, q, tol)
}

/// Left side, right side and verdict of an inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        BoundCheck {
            lhs,
            rhs,
            holds: lhs <= rhs,
        }
    }
}

/// `16 (1 + zeta(1/p + 1/q))^2`.
pub fn young_constant(p: f64, q: f64) -> Result<f64> {
    if !(p > 1.0 && q > 1.0 && 1.0 / p + 1.0 / q > 1.0) {
        return Err(Error::Argument(format!(
            "p = {p}, q = {q}: the Young condition needs p, q > 1 and 1/p + 1/q > 1"
        )));
    }
    let z = zeta(1.0 / p + 1.0 / q);
    Ok(16.0 * (1.0 + z) * (1.0 + z))
}

// absolute tolerance for moments that feed bound checks
fn moment_tol(f: &Integrand, kernel: &Kernel, q: &Rectangle) -> Result<f64> {
    let (lo, hi) = q.hull();
    let scale = kernel.incremental_variance(lo, hi)? * f.sup_norm().powi(2);
    Ok((1e-10 * scale).max(1e-300))
}

/// `|int_Q f (x) f d^2 Gamma| <= K_{p,q} ||f||_{[q]}^2 V_p(Gamma; Q)` with the
/// certified upper end of `V_p`.
pub fn young_bound_check(f: &Integrand, kernel: &Kernel, q: &Rectangle, p: f64, qexp: f64) -> Result<BoundCheck> {
    let kpq = young_constant(p, qexp)?;
    let lhs = qm_moment_by_parts(f, kernel, q, moment_tol(f, kernel, q)?)?.abs();
    let vp = vp_rect(kernel, q, p, Execution::default())?;
    let norm = f.q_norm(qexp)?;
    Ok(BoundCheck::new(lhs, kpq * norm * norm * vp.upper))
}

/// Diagonal form: `|int_{[s,t]^2} [f (x) f - f(s)^2] d^2 Gamma|
/// <= K_{p,q} ||f||_{[q]} V_q(f; [s, t]) V_p(Gamma; [s, t]^2)`.
pub fn young_diagonal_check(f: &Integrand, kernel: &Kernel, s: f64, t: f64, p: f64, qexp: f64) -> Result<BoundCheck> {
    let kpq = young_constant(p, qexp)?;
    let sq = Rectangle::square(s, t)?;
    let vq = f.q_variation_on(s, t, qexp)?;
    let vp = vp_rect(kernel, &sq, p, Execution::default())?;
    let rhs = kpq * f.q_norm(qexp)? * vq * vp.upper;
    if vq == 0.0 {
        // f is constant on [s, t] and the integrand vanishes identically
        return Ok(BoundCheck::new(0.0, rhs));
    }
    let moment = qm_moment_by_parts(f, kernel, &sq, moment_tol(f, kernel, &sq)?)?;
    let fs = f.eval(s);
    let lhs = (moment - fs * fs * kernel.incremental_variance(s, t)?).abs();
    Ok(BoundCheck::new(lhs, rhs))
}

/// Second-moment bound `E(int_s^t f dX)^2 <= K V_p(Gamma; [s, t]^2)` with
/// `K = K_{p,q} ||f||_{[q]}^2`.
pub fn integral_bound_check(f: &Integrand, kernel: &Kernel, s: f64, t: f64, p: f64, qexp: f64) -> Result<BoundCheck> {
    young_bound_check(f, kernel, &Rectangle::square(s, t)?, p, qexp)
}

/// `|int_Q f (x) g d^2 Gamma| <= ||f||_sup ||g||_sup V_1(Gamma; Q)`.
pub fn drs_bound_check(f: &Integrand, g: &Integrand, kernel: &Kernel, q: &Rectangle) -> Result<BoundCheck> {
    let tol = moment_tol(f, kernel, q)?.max(moment_tol(g, kernel, q)?);
    let lhs = double_integral(f, g, kernel, q, tol)?.abs();
    let v1 = vp_rect(kernel, q, 1.0, Execution::default())?;
    Ok(BoundCheck::new(lhs, f.sup_norm() * g.sup_norm() * v1.upper))
}
