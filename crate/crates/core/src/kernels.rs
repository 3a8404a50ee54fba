//! Covariance kernels of the Gaussian families with locally stationary
//! increments: fractional, sub-fractional and bifractional Brownian motion,
//! the auxiliary process of the Lei-Nualart decomposition, and tabulated
//! custom covariances.
//!
//! Double increments are evaluated from closed forms with the separable
//! terms (`s^{2H} + t^{2H}` and friends) cancelled analytically, so small
//! rectangles do not lose precision to cancellation between O(1) values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Declared sign of increment correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignStructure {
    /// `E[X(v)-X(u)][X(t)-X(s)] >= 0` for all `u < v <= s < t`.
    PositiveDisjoint,
    /// Disjoint increments are nonpositively correlated, nested ones nonnegatively.
    NegativeDisjointPositiveNested,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Fbm {
        hurst: f64,
    },
    SubFbm {
        hurst: f64,
    },
    BiFbm {
        hurst: f64,
        k: f64,
    },
    /// Covariance `Gamma(1-K)/K [t^{2HK} + s^{2HK} - (t^{2H} + s^{2H})^K]`.
    LeiNualart {
        hurst: f64,
        k: f64,
    },
    Custom(CustomGrid),
}

/// Covariance tabulated on a product grid, interpolated bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomGrid {
    axis: Vec<f64>,
    values: Vec<f64>,
    gamma: Option<f64>,
    sign: SignStructure,
}

impl CustomGrid {
    /// Builds the grid from `(s, t, Gamma(s, t))` triples covering a full,
    /// symmetric product grid.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        let mut axis: Vec<f64> = triples.iter().flat_map(|&(s, t, _)| [s, t]).collect();
        axis.sort_by(f64::total_cmp);
        axis.dedup();
        let n = axis.len();
        if n < 2 {
            return Err(Error::argument("custom grid needs at least two distinct times"));
        }
        if axis[0] < 0.0 {
            return Err(Error::argument("custom grid times must be nonnegative"));
        }
        let mut values = vec![f64::NAN; n * n];
        for &(s, t, g) in triples {
            let i = axis.partition_point(|&x| x < s);
            let j = axis.partition_point(|&x| x < t);
            values[i * n + j] = g;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::argument("custom grid is not a full product grid"));
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (values[i * n + j] - values[j * n + i]).abs() > 1e-12 * scale {
                    return Err(Error::Argument(format!(
                        "custom covariance is not symmetric at ({}, {})",
                        axis[i], axis[j]
                    )));
                }
            }
        }
        Ok(CustomGrid {
            axis,
            values,
            gamma: None,
            sign: SignStructure::Unknown,
        })
    }

    /// Parses CSV lines `s,t,gamma`; a non-numeric first line is treated as a header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
            match parsed {
                Some(v) if v.len() == 3 => triples.push((v[0], v[1], v[2])),
                _ if lineno == 0 => continue,
                _ => {
                    return Err(Error::Argument(format!(
                        "custom grid CSV line {}: expected three numbers `s,t,gamma`",
                        lineno + 1
                    )))
                }
            }
        }
        CustomGrid::from_triples(&triples)
    }

    /// Declares the Orey index of the tabulated process.
    pub fn with_orey_index(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter {
                name: "gamma",
                value: gamma,
                reason: "Orey index must lie in (0, 1)",
            });
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    pub fn with_sign_structure(mut self, sign: SignStructure) -> Self {
        self.sign = sign;
        self
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    fn interpolate(&self, s: f64, t: f64) -> f64 {
        let n = self.axis.len();
        let locate = |x: f64| {
            let i = self.axis.partition_point(|&a| a <= x).clamp(1, n - 1) - 1;
            let w = (x - self.axis[i]) / (self.axis[i + 1] - self.axis[i]);
            (i, w.clamp(0.0, 1.0))
        };
        let (i, u) = locate(s);
        let (j, v) = locate(t);
        let g = |a: usize, b: usize| self.values[a * n + b];
        (1.0 - u) * (1.0 - v) * g(i, j)
            + u * (1.0 - v) * g(i + 1, j)
            + (1.0 - u) * v * g(i, j + 1)
            + u * v * g(i + 1, j + 1)
    }
}

/// A closed rectangle `[a, b] x [c, d]` with `a < b`, `c < d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Rectangle {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        if !(a < b && c < d) {
            return Err(Error::Argument(format!("rectangle [{a}, {b}] x [{c}, {d}] is empty")));
        }
        Ok(Rectangle { a, b, c, d })
    }

    pub fn square(a: f64, b: f64) -> Result<Self> {
        Rectangle::new(a, b, a, b)
    }

    pub fn is_diagonal_square(&self) -> bool {
        self.a == self.c && self.b == self.d
    }

    /// The two sides overlap in at most an endpoint.
    pub fn is_off_diagonal(&self) -> bool {
        self.b <= self.c || self.d <= self.a
    }

    /// Smallest interval containing both sides.
    pub fn hull(&self) -> (f64, f64) {
        (self.a.min(self.c), self.b.max(self.d))
    }

    pub fn contains(&self, other: &Rectangle) -> bool {
        self.a <= other.a && other.b <= self.b && self.c <= other.c && other.d <= self.d
    }
}

/// Local variance `rho(u) = scale * u^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalVariance {
    pub scale: f64,
    pub exponent: f64,
}

impl LocalVariance {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter {
                name: "scale",
                value: scale,
                reason: "local variance scale must be positive",
            });
        }
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(Error::Parameter {
                name: "exponent",
                value: exponent,
                reason: "local variance exponent must lie in (0, 1)",
            });
        }
        Ok(LocalVariance { scale, exponent })
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.scale * u.abs().powf(self.exponent)
    }
}

/// A covariance model on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: Family,
    horizon: f64,
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter {
            name: "H",
            value: h,
            reason: "Hurst index must lie in (0, 1)",
        })
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter {
            name: "T",
            value: t,
            reason: "horizon must be positive and finite",
        })
    }
}

fn check_k(k: f64, allow_one: bool) -> Result<()> {
    let ok = k > 0.0 && (k < 1.0 || (allow_one && k == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter {
            name: "K",
            value: k,
            reason: if allow_one {
                "K must lie in (0, 1]"
            } else {
                "K must lie in (0, 1)"
            },
        })
    }
}

#[inline]
fn pw(x: f64, e: f64) -> f64 {
    x.abs().powf(e)
}

/// Constants `A = 2^{-K} K / Gamma(1-K)` and `B = 2^{1-K}` relating
/// bifractional, Lei-Nualart and fractional covariances:
/// `C_{H,K} = -A D_{H,K} + B F_{HK}`.
pub fn lei_nualart_constants(k: f64) -> (f64, f64) {
    let a = 2f64.powf(-k) * k / special::gamma(1.0 - k);
    let b = 2f64.powf(1.0 - k);
    (a, b)
}

impl Kernel {
    pub fn fbm(hurst: f64, horizon: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_horizon(horizon)?;
        Ok(Kernel {
            family: Family::Fbm { hurst },
            horizon,
        })
    }

    pub fn sub_fbm(hurst: f64, horizon: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_horizon(horizon)?;
        Ok(Kernel {
            family: Family::SubFbm { hurst },
            horizon,
        })
    }

    pub fn bi_fbm(hurst: f64, k: f64, horizon: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_k(k, true)?;
        check_horizon(horizon)?;
        Ok(Kernel {
            family: Family::BiFbm { hurst, k },
            horizon,
        })
    }

    pub fn lei_nualart(hurst: f64, k: f64, horizon: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_k(k, false)?;
        check_horizon(horizon)?;
        Ok(Kernel {
            family: Family::LeiNualart { hurst, k },
            horizon,
        })
    }

    /// Standard Brownian motion, as fBm with `H = 1/2`.
    pub fn brownian(horizon: f64) -> Result<Self> {
        Kernel::fbm(0.5, horizon)
    }

    pub fn custom(grid: CustomGrid) -> Result<Self> {
        let horizon = *grid.axis.last().expect("grid has at least two points");
        check_horizon(horizon)?;
        Ok(Kernel {
            family: Family::Custom(grid),
            horizon,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn name(&self) -> String {
        match &self.family {
            Family::Fbm { hurst } => format!("fbm(H={hurst})"),
            Family::SubFbm { hurst } => format!("subfbm(H={hurst})"),
            Family::BiFbm { hurst, k } => format!("bifbm(H={hurst},K={k})"),
            Family::LeiNualart { hurst, k } => format!("lei-nualart(H={hurst},K={k})"),
            Family::Custom(g) => format!("custom({} points)", g.axis.len()),
        }
    }

    /// Orey index: `HK` for the bifractional family, `H` for fBm and sub-fBm.
    ///
    /// The Lei-Nualart process reports `HK`, the index of the bifractional
    /// motion it decomposes; custom kernels report their declared index.
    pub fn orey_index(&self) -> Option<f64> {
        match &self.family {
            Family::Fbm { hurst } | Family::SubFbm { hurst } => Some(*hurst),
            Family::BiFbm { hurst, k } | Family::LeiNualart { hurst, k } => Some(hurst * k),
            Family::Custom(g) => g.gamma,
        }
    }

    /// Variation index `p = max(1, 1/(2 gamma))`.
    pub fn p(&self) -> Option<f64> {
        self.orey_index().map(|g| (1.0 / (2.0 * g)).max(1.0))
    }

    pub fn sign_structure(&self) -> SignStructure {
        match &self.family {
            Family::Fbm { hurst } | Family::SubFbm { hurst } => {
                if *hurst >= 0.5 {
                    SignStructure::PositiveDisjoint
                } else {
                    SignStructure::NegativeDisjointPositiveNested
                }
            }
            Family::BiFbm { hurst, k } => {
                if *k == 1.0 {
                    Kernel {
                        family: Family::Fbm { hurst: *hurst },
                        horizon: self.horizon,
                    }
                    .sign_structure()
                } else {
                    SignStructure::Unknown
                }
            }
            Family::LeiNualart { .. } => SignStructure::PositiveDisjoint,
            Family::Custom(g) => g.sign,
        }
    }

    fn domain(&self) -> (f64, f64) {
        match &self.family {
            Family::Custom(g) => (g.axis[0], self.horizon),
            _ => (0.0, self.horizon),
        }
    }

    fn check_time(&self, name: &'static str, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        let slack = 1e-12 * hi;
        if x.is_finite() && x >= lo - slack && x <= hi + slack {
            Ok(x.clamp(lo, hi))
        } else {
            Err(Error::Domain { name, value: x, lo, hi })
        }
    }

    /// `Gamma_X(s, t)`.
    pub fn covariance(&self, s: f64, t: f64) -> Result<f64> {
        let s = self.check_time("s", s)?;
        let t = self.check_time("t", t)?;
        Ok(self.covariance_unchecked(s, t))
    }

    pub(crate) fn covariance_unchecked(&self, s: f64, t: f64) -> f64 {
        match &self.family {
            Family::Fbm { hurst } => {
                let e = 2.0 * hurst;
                0.5 * (pw(t, e) + pw(s, e) - pw(t - s, e))
            }
            Family::SubFbm { hurst } => {
                let e = 2.0 * hurst;
                pw(s, e) + pw(t, e) - 0.5 * (pw(s + t, e) + pw(s - t, e))
            }
            Family::BiFbm { hurst, k } => {
                if *k == 1.0 {
                    let e = 2.0 * hurst;
                    return 0.5 * (pw(t, e) + pw(s, e) - pw(t - s, e));
                }
                let e = 2.0 * hurst;
                2f64.powf(-k) * ((pw(t, e) + pw(s, e)).powf(*k) - pw(t - s, e * k))
            }
            Family::LeiNualart { hurst, k } => {
                let e = 2.0 * hurst;
                let g = special::gamma(1.0 - k) / k;
                g * (pw(t, e * k) + pw(s, e * k) - (pw(t, e) + pw(s, e)).powf(*k))
            }
            Family::Custom(g) => g.interpolate(s, t),
        }
    }

    /// `sigma_X^2(s, t) = E[X(t) - X(s)]^2`, clamped at zero.
    pub fn incremental_variance(&self, s: f64, t: f64) -> Result<f64> {
        let s = self.check_time("s", s)?;
        let t = self.check_time("t", t)?;
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        Ok(self.increment_unchecked(lo, hi, lo, hi).max(0.0))
    }

    /// Double increment over `Q`.
    pub fn rect_increment(&self, q: &Rectangle) -> Result<f64> {
        self.increment(q.a, q.b, q.c, q.d)
    }

    /// Double increment `G(b,d) - G(a,d) - G(b,c) + G(a,c)` for raw
    /// coordinates; zero when either side is degenerate.
    pub fn increment(&self, a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
        let a = self.check_time("a", a)?;
        let b = self.check_time("b", b)?;
        let c = self.check_time("c", c)?;
        let d = self.check_time("d", d)?;
        if a == b || c == d {
            return Ok(0.0);
        }
        Ok(self.increment_unchecked(a, b, c, d))
    }

    pub(crate) fn increment_unchecked(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        if a == b || c == d {
            return 0.0;
        }
        // |x - y|^e double increment
        let dist = |e: f64| pw(b - d, e) - pw(a - d, e) - pw(b - c, e) + pw(a - c, e);
        match &self.family {
            Family::Fbm { hurst } => -0.5 * dist(2.0 * hurst),
            Family::SubFbm { hurst } => {
                let e = 2.0 * hurst;
                let sum = pw(b + d, e) - pw(a + d, e) - pw(b + c, e) + pw(a + c, e);
                -0.5 * (sum + dist(e))
            }
            Family::BiFbm { hurst, k } => {
                if *k == 1.0 {
                    return -0.5 * dist(2.0 * hurst);
                }
                2f64.powf(-k) * (self.phi_increment(*hurst, *k, a, b, c, d) - dist(2.0 * hurst * k))
            }
            Family::LeiNualart { hurst, k } => {
                let g = special::gamma(1.0 - k) / k;
                -g * self.phi_increment(*hurst, *k, a, b, c, d)
            }
            Family::Custom(g) => g.interpolate(b, d) - g.interpolate(a, d) - g.interpolate(b, c) + g.interpolate(a, c),
        }
    }

    // double increment of (x^{2H} + y^{2H})^K
    fn phi_increment(&self, hurst: f64, k: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let e = 2.0 * hurst;
        let (pa, pb, pc, pd) = (pw(a, e), pw(b, e), pw(c, e), pw(d, e));
        (pb + pd).powf(k) - (pa + pd).powf(k) - (pb + pc).powf(k) + (pa + pc).powf(k)
    }

    /// Canonical local variance of the family: `u^H` for fBm and sub-fBm,
    /// `2^{(1-K)/2} u^{HK}` for the bifractional family.
    pub fn local_variance(&self) -> Result<LocalVariance> {
        match &self.family {
            Family::Fbm { hurst } | Family::SubFbm { hurst } => LocalVariance::new(1.0, *hurst),
            Family::BiFbm { hurst, k } => LocalVariance::new(2f64.powf((1.0 - k) / 2.0), hurst * k),
            Family::LeiNualart { .. } => Err(Error::Unsupported(
                "the Lei-Nualart process has no canonical local variance".into(),
            )),
            Family::Custom(_) => Err(Error::Unsupported(
                "custom kernels have no canonical local variance".into(),
            )),
        }
    }

    /// `rho(u)` for the canonical local variance.
    pub fn local_variance_at(&self, u: f64) -> Result<f64> {
        let lv = self.local_variance()?;
        let u = self.check_time("u", u)?;
        Ok(lv.eval(u))
    }

    /// Constant `L` with `sigma^2(s, t) <= L |t - s|^{2 gamma}` on `[0, T]^2`.
    pub fn variance_constant(&self) -> Option<f64> {
        match &self.family {
            Family::Fbm { .. } => Some(1.0),
            Family::SubFbm { hurst } => Some(if *hurst < 0.5 {
                2.0 - 2f64.powf(2.0 * hurst - 1.0)
            } else {
                1.0
            }),
            Family::BiFbm { k, .. } => Some(2f64.powf(1.0 - k)),
            _ => None,
        }
    }

    /// Constant `C_1` with `V_p(Gamma; [s,t]^2) <= C_1 (t - s)^{2 gamma}`.
    pub fn diagonal_constant(&self) -> Option<f64> {
        match &self.family {
            Family::Fbm { hurst } => Some(if 2.0 * hurst >= 1.0 { 1.0 } else { 2.0 }),
            Family::SubFbm { hurst } => Some(if *hurst >= 0.5 {
                1.0
            } else {
                4.0 - 2f64.powf(2.0 * hurst)
            }),
            Family::BiFbm { hurst, k } => {
                if *k == 1.0 {
                    Some(if 2.0 * hurst >= 1.0 { 1.0 } else { 2.0 })
                } else {
                    Some(5.0 * 2f64.powf(-k))
                }
            }
            _ => None,
        }
    }

    /// Constant `C_2` with `sum_j |E[Delta_i X Delta_j X]| <= C_2 Delta_i^{1 ∧ 2 gamma}`
    /// for every partition of `[0, T]`.
    pub fn row_sum_constant(&self) -> Option<f64> {
        let t = self.horizon;
        let fbm = |h: f64| {
            if 2.0 * h >= 1.0 {
                2.0 * h * t.powf(2.0 * h - 1.0)
            } else {
                3.0
            }
        };
        match &self.family {
            Family::Fbm { hurst } => Some(fbm(*hurst)),
            Family::SubFbm { hurst } => Some(if *hurst >= 0.5 {
                2.0 * hurst * t.powf(2.0 * hurst - 1.0)
            } else {
                4.0 - 2f64.powf(2.0 * hurst)
            }),
            Family::BiFbm { hurst, k } => {
                if *k == 1.0 {
                    return Some(fbm(*hurst));
                }
                let hk = hurst * k;
                Some(if 2.0 * hk < 1.0 {
                    7.0 * 2f64.powf(-k)
                } else {
                    6.0 * hk * 2f64.powf(-k) * t.powf(2.0 * hk - 1.0)
                })
            }
            _ => None,
        }
    }
}

/// Structured kernel record as accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// One of `fbm`, `subfbm`, `bifbm`, `lei-nualart`, `custom`.
    pub family: String,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    /// CSV of `(s, t, Gamma)` triples, for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_csv: Option<String>,
    /// Declared Orey index, for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Declared sign structure, for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<SignStructure>,
}

fn default_horizon() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        self.build_relative_to(Path::new("."))
    }

    /// Builds the kernel, resolving a relative `grid_csv` against `base`.
    pub fn build_relative_to(&self, base: &Path) -> Result<Kernel> {
        let hurst = || {
            self.hurst
                .ok_or_else(|| Error::argument("kernel.H is required for this family"))
        };
        match self.family.to_ascii_lowercase().as_str() {
            "fbm" => Kernel::fbm(hurst()?, self.horizon),
            "subfbm" | "sub-fbm" => Kernel::sub_fbm(hurst()?, self.horizon),
            "brownian" => Kernel::brownian(self.horizon),
            "bifbm" | "bi-fbm" => Kernel::bi_fbm(hurst()?, self.k.unwrap_or(1.0), self.horizon),
            "lei-nualart" | "lei_nualart" => {
                let k = self
                    .k
                    .ok_or_else(|| Error::argument("kernel.K is required for lei-nualart"))?;
                Kernel::lei_nualart(hurst()?, k, self.horizon)
            }
            "custom" => {
                let path = self
                    .grid_csv
                    .as_ref()
                    .ok_or_else(|| Error::argument("kernel.grid_csv is required for custom"))?;
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Argument(format!("kernel.grid_csv {}: {e}", path.display())))?;
                let mut grid = CustomGrid::from_csv_str(&text)?;
                if let Some(g) = self.gamma {
                    grid = grid.with_orey_index(g)?;
                }
                if let Some(sign) = self.sign {
                    grid = grid.with_sign_structure(sign);
                }
                Kernel::custom(grid)
            }
            other => Err(Error::Argument(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Result of checking `sigma(s, s+h) / rho(h) -> 1` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalStationarityReport {
    /// `sup |sigma(s, s+h) / rho(h) - 1|` over the whole grid.
    pub sup: f64,
    /// Per-width suprema, widths in decreasing order.
    pub per_width: Vec<(f64, f64)>,
    /// Whether the per-width supremum is nonincreasing as the width shrinks.
    pub decreasing: bool,
    /// Least-squares slope of `log sup_h` against `log h`, when all suprema are positive.
    pub rate: Option<f64>,
}

/// Sup-deviation of the normalized increment standard deviation from one.
pub fn verify_local_stationarity(
    kernel: &Kernel,
    eps: f64,
    widths: &[f64],
    anchors: &[f64],
) -> Result<LocalStationarityReport> {
    if widths.is_empty() || anchors.is_empty() {
        return Err(Error::argument("width and anchor grids must be nonempty"));
    }
    let horizon = kernel.horizon();
    if !(eps > 0.0 && eps < horizon) {
        return Err(Error::Argument(format!("eps = {eps} must lie in (0, T)")));
    }
    if let Some(s) = anchors.iter().find(|&&s| s < eps || s >= horizon) {
        return Err(Error::Argument(format!("anchor {s} is outside [eps, T)")));
    }
    if widths.iter().any(|&h| h <= 0.0) {
        return Err(Error::argument("widths must be positive"));
    }
    let rho = kernel.local_variance()?;
    let mut hs: Vec<f64> = widths.to_vec();
    hs.sort_by(|x, y| y.total_cmp(x));
    hs.dedup();
    let mut per_width = Vec::with_capacity(hs.len());
    for &h in &hs {
        let mut sup = 0.0f64;
        for &s in anchors {
            if s + h > horizon {
                continue;
            }
            let sigma = kernel.incremental_variance(s, s + h)?.sqrt();
            sup = sup.max((sigma / rho.eval(h) - 1.0).abs());
        }
        per_width.push((h, sup));
    }
    let sup = per_width.iter().fold(0.0f64, |m, &(_, v)| m.max(v));
    let decreasing = per_width.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-15);
    let rate = if per_width.len() >= 2 && per_width.iter().all(|&(_, v)| v > 0.0) {
        let xs: Vec<f64> = per_width.iter().map(|&(h, _)| h.ln()).collect();
        let ys: Vec<f64> = per_width.iter().map(|&(_, v)| v.ln()).collect();
        Some(least_squares(&xs, &ys).0)
    } else {
        None
    };
    Ok(LocalStationarityReport {
        sup,
        per_width,
        decreasing,
        rate,
    })
}

/// Log-log regression estimate of the Orey index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OreyEstimate {
    pub gamma: f64,
    pub std_error: f64,
    pub anchor: f64,
    pub points: usize,
}

/// Slope of `log sigma(s, s+h)` against `log h` at a single anchor `s`
/// (default `T/2`).
pub fn estimate_orey_index(kernel: &Kernel, widths: &[f64], anchor: Option<f64>) -> Result<OreyEstimate> {
    if widths.len() < 4 {
        return Err(Error::argument("at least four widths are required"));
    }
    if widths.windows(2).any(|w| w[1] >= w[0]) || widths[widths.len() - 1] <= 0.0 {
        return Err(Error::argument("widths must be positive and strictly decreasing"));
    }
    let horizon = kernel.horizon();
    let s = anchor.unwrap_or(0.5 * horizon);
    if !(s > 0.0 && s < horizon) || s + widths[0] > horizon {
        return Err(Error::Argument(format!(
            "anchor {s} must lie in (0, T) with anchor + max width <= T"
        )));
    }
    let mut xs = Vec::with_capacity(widths.len());
    let mut ys = Vec::with_capacity(widths.len());
    for &h in widths {
        let var = kernel.incremental_variance(s, s + h)?;
        if var <= 0.0 {
            return Err(Error::Numerical(format!("zero incremental variance at width {h}")));
        }
        xs.push(h.ln());
        ys.push(0.5 * var.ln());
    }
    let (gamma, std_error) = least_squares(&xs, &ys);
    Ok(OreyEstimate {
        gamma,
        std_error,
        anchor: s,
        points: widths.len(),
    })
}

/// Ordinary least squares slope and its standard error.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if xs.len() <= 2 {
        return (slope, 0.0);
    }
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}
