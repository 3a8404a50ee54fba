//! Special functions and quadrature rules.

use std::sync::OnceLock;

/// Gamma function (Lanczos approximation, relative error below 1e-13 on the positive axis).
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Riemann zeta function for real `s > 1`.
///
/// Euler-Maclaurin summation: twenty explicit terms, the integral tail and
/// seven Bernoulli corrections. Absolute error is below 1e-14 for `s >= 1.01`.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta requires s > 1, got {s}");
    const N: usize = 20;
    // B_{2j} / (2j)!
    const BERNOULLI_OVER_FACTORIAL: [f64; 7] = [
        1.0 / 6.0 / 2.0,
        -1.0 / 30.0 / 24.0,
        1.0 / 42.0 / 720.0,
        -1.0 / 30.0 / 40320.0,
        5.0 / 66.0 / 3628800.0,
        -691.0 / 2730.0 / 479001600.0,
        7.0 / 6.0 / 87178291200.0,
    ];
    let n = N as f64;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let mut total = head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // rising factorial s (s+1) ... (s + 2j - 2), times N^{-s-2j+1}
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        if j > 0 {
            let jf = j as f64;
            rising *= (s + 2.0 * jf - 1.0) * (s + 2.0 * jf);
            power /= n * n;
        }
        total += coeff * rising * power;
    }
    total
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn gl15() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(15);
        Rule { nodes, weights }
    })
}

fn gl7() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(7);
        Rule { nodes, weights }
    })
}

fn apply_1d(rule: &Rule, f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Adaptive 15-point Gauss-Legendre quadrature of `f` over `[a, b]`.
///
/// Bisects until the two-halves estimate agrees with the whole-interval
/// estimate to `tol` (absolute), or the depth limit is reached.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gl15();
    let whole = apply_1d(rule, &f, a, b);
    adapt_1d(rule, &f, a, b, whole, tol, 0)
}

fn adapt_1d(rule: &Rule, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let left = apply_1d(rule, f, a, mid);
    let right = apply_1d(rule, f, mid, b);
    let both = left + right;
    if (both - whole).abs() <= tol || depth >= 40 || mid <= a || mid >= b {
        return both;
    }
    adapt_1d(rule, f, a, mid, left, 0.5 * tol, depth + 1) + adapt_1d(rule, f, mid, b, right, 0.5 * tol, depth + 1)
}

fn apply_2d(rule: &Rule, f: &impl Fn(f64, f64) -> f64, x: (f64, f64), y: (f64, f64)) -> f64 {
    let hx = 0.5 * (x.1 - x.0);
    let mx = 0.5 * (x.0 + x.1);
    let hy = 0.5 * (y.1 - y.0);
    let my = 0.5 * (y.0 + y.1);
    let mut total = 0.0;
    for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
        let xv = mx + hx * u;
        let mut row = 0.0;
        for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
            row += wv * f(xv, my + hy * v);
        }
        total += wu * row;
    }
    total * hx * hy
}

/// Adaptive tensor-product Gauss-Legendre cubature over a rectangle.
///
/// Quadrisects cells whose four-child estimate disagrees with the parent by
/// more than the cell's share of `tol`. Intended for continuous integrands
/// with kinks along lines, such as covariance increments near the diagonal.
pub fn integrate_2d(f: impl Fn(f64, f64) -> f64, x: (f64, f64), y: (f64, f64), tol: f64) -> f64 {
    if x.1 <= x.0 || y.1 <= y.0 {
        return 0.0;
    }
    let rule = gl7();
    let whole = apply_2d(rule, &f, x, y);
    adapt_2d(rule, &f, x, y, whole, tol, 0)
}

fn adapt_2d(
    rule: &Rule,
    f: &impl Fn(f64, f64) -> f64,
    x: (f64, f64),
    y: (f64, f64),
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let mx = 0.5 * (x.0 + x.1);
    let my = 0.5 * (y.0 + y.1);
    let quads = [
        ((x.0, mx), (y.0, my)),
        ((x.0, mx), (my, y.1)),
        ((mx, x.1), (y.0, my)),
        ((mx, x.1), (my, y.1)),
    ];
    let parts: [f64; 4] = quads.map(|(qx, qy)| apply_2d(rule, f, qx, qy));
    let sum: f64 = parts.iter().sum();
    if (sum - whole).abs() <= tol || depth >= 12 {
        return sum;
    }
    quads
        .iter()
        .zip(parts)
        .map(|(&(qx, qy), part)| adapt_2d(rule, f, qx, qy, part, 0.5 * tol, depth + 1))
        .sum()
}
