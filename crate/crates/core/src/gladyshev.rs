//! The power-variation statistic `S_n = sum |Delta_i Y|^r rho(Delta_i)^{-r} Delta_i`,
//! its exact expectation and limit, mesh-rate admissibility, the Gaussian
//! concentration bound, and the mean and almost-sure convergence experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrand::Integrand;
use crate::kernels::{Kernel, LocalVariance, Rectangle};
use crate::partition::Partition;
use crate::pvar::off_diagonal_v1;
use crate::rs_integral::double_integral;
use crate::sampler::{increment_cov_matrix, IncrementCovariance};
use crate::special;

/// Rule generating the partitions `kappa_n` of `[0, T]`, `n = 1, 2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceRule {
    /// Uniform partitions with `m_n = n * base` cells.
    Uniform { base: usize },
    /// Dyadic partitions with `m_n = 2^n` cells; nested.
    Dyadic,
    /// Uniform partitions with `m_n = ceil((log n)^a)` cells (at least one).
    Log { a: f64 },
    /// Uniform partitions with the listed cell counts.
    Cells { cells: Vec<usize> },
    /// Explicit grids.
    Explicit { partitions: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSequence {
    rule: SequenceRule,
    horizon: f64,
}

impl PartitionSequence {
    pub fn new(rule: SequenceRule, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter {
                name: "T",
                value: horizon,
                reason: "horizon must be positive and finite",
            });
        }
        match &rule {
            SequenceRule::Uniform { base } if *base == 0 => {
                return Err(Error::argument("uniform sequence needs base >= 1"))
            }
            SequenceRule::Log { a } if !(*a > 0.0) => return Err(Error::argument("log sequence needs a > 0")),
            SequenceRule::Cells { cells } if cells.is_empty() || cells.contains(&0) => {
                return Err(Error::argument("cell counts must be positive"))
            }
            SequenceRule::Explicit { partitions } => {
                for p in partitions {
                    let p = Partition::new(p.clone())?;
                    if p.start() != 0.0 || (p.end() - horizon).abs() > 1e-12 * horizon {
                        return Err(Error::argument("explicit partitions must span [0, T]"));
                    }
                }
            }
            _ => {}
        }
        Ok(PartitionSequence { rule, horizon })
    }

    pub fn uniform(base: usize, horizon: f64) -> Result<Self> {
        PartitionSequence::new(SequenceRule::Uniform { base }, horizon)
    }

    pub fn dyadic(horizon: f64) -> Result<Self> {
        PartitionSequence::new(SequenceRule::Dyadic, horizon)
    }

    pub fn log(a: f64, horizon: f64) -> Result<Self> {
        PartitionSequence::new(SequenceRule::Log { a }, horizon)
    }

    pub fn cells(cells: Vec<usize>, horizon: f64) -> Result<Self> {
        PartitionSequence::new(SequenceRule::Cells { cells }, horizon)
    }

    pub fn rule(&self) -> &SequenceRule {
        &self.rule
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_nested(&self) -> bool {
        matches!(self.rule, SequenceRule::Dyadic)
    }

    /// Largest available index, if the rule is finite.
    pub fn last_index(&self) -> Option<usize> {
        match &self.rule {
            SequenceRule::Cells { cells } => Some(cells.len()),
            SequenceRule::Explicit { partitions } => Some(partitions.len()),
            _ => None,
        }
    }

    /// `kappa_n` for `n >= 1`.
    pub fn partition(&self, n: usize) -> Result<Partition> {
        if n == 0 {
            return Err(Error::argument("sequence indices start at 1"));
        }
        if let Some(len) = self.last_index() {
            if n > len {
                return Err(Error::Argument(format!("sequence has only {len} partitions")));
            }
        }
        let t = self.horizon;
        match &self.rule {
            SequenceRule::Uniform { base } => Partition::uniform(0.0, t, n * base),
            SequenceRule::Dyadic => {
                if n > 30 {
                    return Err(Error::argument("dyadic level above 30 is not supported"));
                }
                Partition::dyadic(t, n as u32)
            }
            SequenceRule::Log { a } => Partition::uniform(0.0, t, log_cells(n, *a)),
            SequenceRule::Cells { cells } => Partition::uniform(0.0, t, cells[n - 1]),
            SequenceRule::Explicit { partitions } => Partition::new(partitions[n - 1].clone()),
        }
    }
}

fn log_cells(n: usize, a: f64) -> usize {
    ((n as f64).ln().powf(a).ceil() as usize).max(1)
}

/// `E|eta|^r = 2^{r/2} Gamma((r+1)/2) / sqrt(pi)` for standard normal `eta`.
pub fn normal_abs_moment(r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Argument(format!("r = {r} must be positive")));
    }
    Ok(2f64.powf(0.5 * r) * special::gamma(0.5 * (r + 1.0)) / std::f64::consts::PI.sqrt())
}

/// `sum_i |dY_i|^r rho(Delta_i)^{-r} Delta_i`.
pub fn power_variation_statistic(dy: &[f64], kappa: &Partition, rho: &LocalVariance, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Argument(format!("r = {r} must be positive")));
    }
    if dy.len() != kappa.cells() {
        return Err(Error::Argument(format!(
            "{} increments for {} cells",
            dy.len(),
            kappa.cells()
        )));
    }
    let mut total = 0.0;
    for (y, w) in dy.iter().zip(kappa.widths()) {
        total += y.abs().powf(r) * weight(rho, w, r)?;
    }
    Ok(total)
}

// Delta / rho(Delta)^r
fn weight(rho: &LocalVariance, width: f64, r: f64) -> Result<f64> {
    let v = rho.eval(width);
    if v <= 0.0 {
        return Err(Error::InvalidLocalVariance(width));
    }
    Ok(width / v.powf(r))
}

/// `E|eta|^r int_0^T |f|^r`.
pub fn expected_limit(f: &Integrand, r: f64) -> Result<f64> {
    Ok(normal_abs_moment(r)? * f.integral_abs_pow(r))
}

/// Exact `E S_n` with the diagnostics `T_n`, `U_n`, `W_n` bounding its
/// distance to the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStatistic {
    pub value: f64,
    /// `sum |f(t_{i-1})|^r Delta_i`.
    pub t_n: f64,
    /// `sum (f(t_{i-1})^2 |b(t_{i-1}, t_i)|)^{r/2} Delta_i` with
    /// `b = sigma^2 / rho^2 - 1`.
    pub u_n: f64,
    /// `sum (|int int [f (x) f - f(t_{i-1})^2] d^2 Gamma| / rho^2)^{r/2} Delta_i`.
    pub w_n: f64,
}

/// `E S_n` for the family's canonical local variance.
pub fn mean_statistic(f: &Integrand, kernel: &Kernel, kappa: &Partition, r: f64) -> Result<f64> {
    let rho = kernel.local_variance()?;
    Ok(mean_statistic_with(f, kernel, kappa, r, &rho, 1e-9, Execution::default())?.value)
}

/// `E S_n = E|eta|^r sum M_ii^{r/2} rho(Delta_i)^{-r} Delta_i`, where `M_ii`
/// is the second moment of the integral over cell `i` (relative
/// tolerance `tol` for non-constant `f`).
pub fn mean_statistic_with(
    f: &Integrand,
    kernel: &Kernel,
    kappa: &Partition,
    r: f64,
    rho: &LocalVariance,
    tol: f64,
    exec: Execution,
) -> Result<MeanStatistic> {
    let diag = diagonal_moments(f, kernel, kappa, tol, exec)?;
    mean_from_diagonal(f, kappa, r, rho, &diag)
}

fn mean_from_diagonal(
    f: &Integrand,
    kappa: &Partition,
    r: f64,
    rho: &LocalVariance,
    diag: &[(f64, f64)],
) -> Result<MeanStatistic> {
    let moment = normal_abs_moment(r)?;
    let (mut value, mut t_n, mut u_n, mut w_n) = (0.0, 0.0, 0.0, 0.0);
    for (i, &(m_ii, sigma2)) in diag.iter().enumerate() {
        let (a, b) = kappa.cell(i);
        let width = b - a;
        let w = weight(rho, width, r)?;
        let rho2 = rho.eval(width).powi(2);
        let f2 = f.eval(a).powi(2);
        value += m_ii.max(0.0).powf(0.5 * r) * w;
        t_n += f2.powf(0.5 * r) * width;
        u_n += (f2 * (sigma2 / rho2 - 1.0).abs()).powf(0.5 * r) * width;
        w_n += ((m_ii - f2 * sigma2).abs() / rho2).powf(0.5 * r) * width;
    }
    Ok(MeanStatistic {
        value: moment * value,
        t_n,
        u_n,
        w_n,
    })
}

// (M_ii, sigma^2 over cell i)
fn diagonal_moments(
    f: &Integrand,
    kernel: &Kernel,
    kappa: &Partition,
    tol: f64,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    let constant = f.is_constant().then(|| f.eval(0.0));
    let scale = f.sup_norm().powi(2);
    exec.try_map_range(kappa.cells(), |i| {
        let (a, b) = kappa.cell(i);
        let sigma2 = kernel.incremental_variance(a, b)?;
        let m_ii = match constant {
            Some(c) => c * c * sigma2,
            None => {
                let q = Rectangle::square(a, b)?;
                double_integral(f, f, kernel, &q, (tol * scale * sigma2).max(f64::MIN_POSITIVE))?
            }
        };
        Ok((m_ii, sigma2))
    })
}

/// Outcome of the mesh-rate admissibility check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshRateCheck {
    /// `(1 ∧ 2/r) + (0 ∧ (1 - 2 gamma))`.
    pub beta: f64,
    pub passes: bool,
    /// Limit of `|kappa_n|^beta log n` decided analytically, for the built-in rules.
    pub analytic: Option<bool>,
    /// Ratio of the peak of `|kappa_n|^beta log n` to its final value.
    pub empirical_drop: f64,
    /// `(n, mesh, |kappa_n|^beta log n)`.
    pub trace: Vec<(usize, f64, f64)>,
}

/// `beta = (1 ∧ 2/r) + (0 ∧ (1 - 2 gamma))`; errors when nonpositive.
pub fn mesh_exponent(r: f64, gamma: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Argument(format!("r = {r} must be positive")));
    }
    let beta = (2.0 / r).min(1.0) + (1.0 - 2.0 * gamma).min(0.0);
    if beta <= 0.0 {
        return Err(Error::InadmissibleExponent { r, gamma });
    }
    Ok(beta)
}

/// Checks `|kappa_n|^beta log n -> 0` over `n = 1..=big_n`.
///
/// Built-in rules are decided analytically: uniform and dyadic sequences
/// always pass, `m_n = ceil((log n)^a)` passes exactly when `a beta > 1`.
/// Explicit sequences pass when the trace falls by a factor of at least 10
/// from its peak.
pub fn mesh_rate_check(seq: &PartitionSequence, big_n: usize, r: f64, gamma: f64) -> Result<MeshRateCheck> {
    if big_n < 10 {
        return Err(Error::Argument(format!(
            "N = {big_n}: the mesh-rate check needs N >= 10"
        )));
    }
    mesh_rate_trace(seq, 1, big_n, r, gamma)
}

fn mesh_rate_trace(seq: &PartitionSequence, n_min: usize, big_n: usize, r: f64, gamma: f64) -> Result<MeshRateCheck> {
    let beta = mesh_exponent(r, gamma)?;
    let mut trace = Vec::with_capacity(big_n);
    for n in n_min..=big_n {
        let mesh = match seq.rule() {
            SequenceRule::Uniform { base } => seq.horizon() / (n * base) as f64,
            SequenceRule::Dyadic => seq.horizon() * 0.5f64.powi(n as i32),
            SequenceRule::Log { a } => seq.horizon() / log_cells(n, *a) as f64,
            _ => seq.partition(n)?.mesh(),
        };
        trace.push((n, mesh, mesh.powf(beta) * (n as f64).ln()));
    }
    let peak = trace.iter().fold(0.0f64, |m, t| m.max(t.2));
    let last = trace.last().map_or(0.0, |t| t.2);
    let empirical_drop = if last > 0.0 { peak / last } else { f64::INFINITY };
    let analytic = match seq.rule() {
        SequenceRule::Uniform { .. } | SequenceRule::Dyadic => Some(true),
        SequenceRule::Log { a } => Some(a * beta > 1.0),
        _ => None,
    };
    let passes = analytic.unwrap_or(empirical_drop >= 10.0);
    Ok(MeshRateCheck {
        beta,
        passes,
        analytic,
        empirical_drop,
        trace,
    })
}

/// Gaussian concentration of `Z_n = S_n^{1/r}` around its median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Concentration {
    /// Upper bound for the weak variance `sigma_n^2`.
    pub sigma2: f64,
    /// `2 exp(-eps^2 / (2 sigma2))`.
    pub prob: f64,
}

/// Bound on `sigma_n^2` from the row sums `M_i = sum_j |M_ij|` and the
/// weights `c_i = Delta_i / rho(Delta_i)^r`, and the resulting tail bound at `eps`.
pub fn concentration_bound(cov: &IncrementCovariance, rho: &LocalVariance, r: f64, eps: f64) -> Result<Concentration> {
    concentration_from_rows(cov.partition(), &cov.row_abs_sums(), rho, r, eps)
}

pub(crate) fn concentration_from_rows(
    kappa: &Partition,
    rows: &[f64],
    rho: &LocalVariance,
    r: f64,
    eps: f64,
) -> Result<Concentration> {
    if !(r > 1.0) {
        return Err(Error::Argument(format!("r = {r}: concentration needs r > 1")));
    }
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps = {eps} must be positive")));
    }
    let weights: Vec<f64> = kappa
        .widths()
        .into_iter()
        .map(|w| weight(rho, w, r))
        .collect::<Result<_>>()?;
    let sigma2 = if r >= 2.0 {
        weights
            .iter()
            .zip(rows)
            .map(|(c, m)| c.powf(2.0 / r) * m)
            .fold(0.0, f64::max)
    } else {
        let s: f64 = weights
            .iter()
            .zip(rows)
            .map(|(c, m)| c.powf(2.0 / (2.0 - r)) * m.powf(r / (2.0 - r)))
            .sum();
        s.powf((2.0 - r) / r)
    };
    Ok(Concentration {
        sigma2,
        prob: tail(eps, sigma2),
    })
}

fn tail(eps: f64, sigma2: f64) -> f64 {
    if sigma2 > 0.0 {
        2.0 * (-eps * eps / (2.0 * sigma2)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact expectations per `n`, with optional Monte Carlo means.
    Mean,
    /// One sampled path per trial, aggregated over nested dyadic partitions.
    AlmostSure,
}

/// Inputs of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kernel: Kernel,
    pub f: Integrand,
    pub r: f64,
    /// Defaults to the family's canonical local variance.
    pub rho: Option<LocalVariance>,
    pub sequence: PartitionSequence,
    pub mode: Mode,
    /// First index `n` reported.
    pub n_min: usize,
    /// Last index `N`.
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    /// Relative tolerance of the integral second moments.
    pub tol: f64,
    /// Deviation at which the concentration bound is reported.
    pub eps: f64,
    /// Declared tolerance for `|S_n - limit|` in the almost-sure surrogate.
    pub as_tolerance: f64,
}

/// Per-`n` summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub n: usize,
    pub m_n: usize,
    pub mesh: f64,
    /// Exact `E S_n` (mean mode).
    pub mean_exact: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub limit: f64,
    /// `|E S_n - limit|` in mean mode, median of `|S_n - limit|` over trials otherwise.
    pub abs_err: f64,
    pub t_n: Option<f64>,
    pub u_n: Option<f64>,
    pub w_n: Option<f64>,
    /// Variance proxy from the increment covariance row sums; without trials
    /// and with non-constant `f`, computed from upper bounds on the
    /// off-diagonal entries.
    pub sigma2: f64,
    pub conc_bound: f64,
    /// `(eps, empirical Pr(|Z_n - med Z_n| > eps), bound)` at `eps = sigma_n, 2 sigma_n, 3 sigma_n`.
    pub exceedance: Vec<(f64, f64, f64)>,
}

/// One `(trial, n)` observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub n: usize,
    pub m_n: usize,
    pub mesh: f64,
    #[serde(rename = "S_n")]
    pub s_n: f64,
    pub limit: f64,
    pub abs_err: f64,
    pub sigma2: f64,
    pub conc_bound: f64,
}

/// Relation between the canonical statistic and the raw normalization
/// `sum |Delta_i Y|^r Delta_i^{1 - r gamma}`: raw = `scale_power` x canonical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normalization {
    /// `c^r` for `rho(u) = c u^gamma`.
    pub scale_power: f64,
    pub limit: f64,
    pub raw_limit: f64,
}

/// Verdict of the almost-sure surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlmostSureSummary {
    pub tolerance: f64,
    /// Trials whose trajectory stays within tolerance for all `n >= N/2`.
    pub settled: usize,
    /// Trials with `|S_N - limit| < tolerance`.
    pub final_within: usize,
    pub trials: usize,
    /// `settled >= 0.95 trials`.
    pub passes: bool,
    /// No empirical exceedance frequency is above its bound.
    pub concentration_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub kernel: String,
    pub r: f64,
    pub rho: LocalVariance,
    pub seed: u64,
    pub trials: usize,
    pub limit: f64,
    pub normalization: Normalization,
    pub mesh_rate: MeshRateCheck,
    pub levels: Vec<LevelRecord>,
    pub rows: Vec<TrialRow>,
    pub almost_sure: Option<AlmostSureSummary>,
}

fn validate(cfg: &ExperimentConfig) -> Result<(LocalVariance, f64)> {
    let gamma = cfg
        .kernel
        .orey_index()
        .ok_or_else(|| Error::Unsupported("experiments need a kernel with a known Orey index".into()))?;
    let rho = match cfg.rho {
        Some(rho) => rho,
        None => cfg.kernel.local_variance()?,
    };
    if (cfg.f.horizon() - cfg.kernel.horizon()).abs() > 1e-12 * cfg.kernel.horizon()
        || (cfg.sequence.horizon() - cfg.kernel.horizon()).abs() > 1e-12 * cfg.kernel.horizon()
    {
        return Err(Error::argument(
            "kernel, integrand and sequence must share the horizon T",
        ));
    }
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max {
        return Err(Error::Argument(format!(
            "need 1 <= n_min <= N, got n_min = {} and N = {}",
            cfg.n_min, cfg.n_max
        )));
    }
    if !(cfg.tol > 0.0) || !(cfg.eps > 0.0) || !(cfg.as_tolerance > 0.0) {
        return Err(Error::argument("tol, eps and as_tolerance must be positive"));
    }
    if !(cfg.r > 1.0) {
        return Err(Error::Argument(format!(
            "r = {}: experiments need 1 < r < 2/max(2 gamma - 1, 0)",
            cfg.r
        )));
    }
    Ok((rho, gamma))
}

/// Runs the mean or almost-sure convergence experiment.
///
/// Mean mode computes the exact `E S_n` per `n` and, with `trials > 0`,
/// Monte Carlo means from fresh draws at each `kappa_n`. Almost-sure mode
/// requires a dyadic sequence: each trial samples `Delta Y` once at level
/// `N` and sums it over the coarser cells, so one path serves every `n`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    let (rho, gamma) = validate(cfg)?;
    let mesh_rate = mesh_rate_trace(&cfg.sequence, cfg.n_min, cfg.n_max, cfg.r, gamma)?;
    let limit = expected_limit(&cfg.f, cfg.r)?;
    let scale_power = rho.scale.powf(cfg.r);
    let normalization = Normalization {
        scale_power,
        limit,
        raw_limit: scale_power * limit,
    };
    let (levels, rows, almost_sure) = match cfg.mode {
        Mode::Mean => {
            let (levels, rows) = run_mean(cfg, &rho, limit, exec)?;
            (levels, rows, None)
        }
        Mode::AlmostSure => {
            if !cfg.sequence.is_nested() {
                return Err(Error::argument(
                    "almost-sure mode needs a nested dyadic sequence; use mean mode otherwise",
                ));
            }
            if !mesh_rate.passes {
                return Err(Error::MeshRate(format!(
                    "|kappa_n|^{} log n does not tend to zero",
                    mesh_rate.beta
                )));
            }
            if cfg.trials == 0 {
                return Err(Error::argument("almost-sure mode needs at least one trial"));
            }
            let (levels, rows, summary) = run_almost_sure(cfg, &rho, limit, exec)?;
            (levels, rows, Some(summary))
        }
    };
    Ok(ExperimentReport {
        mode: cfg.mode,
        kernel: cfg.kernel.name(),
        r: cfg.r,
        rho,
        seed: cfg.seed,
        trials: cfg.trials,
        limit,
        normalization,
        mesh_rate,
        levels,
        rows,
        almost_sure,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// (eps, empirical, bound) for eps = sigma, 2 sigma, 3 sigma on Z = S^{1/r}
fn exceedances(stats: &[f64], r: f64, sigma2: f64) -> Vec<(f64, f64, f64)> {
    if stats.is_empty() || sigma2 <= 0.0 {
        return Vec::new();
    }
    let z: Vec<f64> = stats.iter().map(|s| s.powf(1.0 / r)).collect();
    let med = median(&mut z.clone());
    let sigma = sigma2.sqrt();
    (1..=3)
        .map(|k| {
            let eps = k as f64 * sigma;
            let count = z.iter().filter(|&&v| (v - med).abs() > eps).count();
            (eps, count as f64 / z.len() as f64, tail(eps, sigma2))
        })
        .collect()
}

// keeps the Monte Carlo draws of different levels on unrelated keys
fn level_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_mean(
    cfg: &ExperimentConfig,
    rho: &LocalVariance,
    limit: f64,
    exec: Execution,
) -> Result<(Vec<LevelRecord>, Vec<TrialRow>)> {
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    for n in cfg.n_min..=cfg.n_max {
        let kappa = cfg.sequence.partition(n)?;
        let diag = diagonal_moments(&cfg.f, &cfg.kernel, &kappa, cfg.tol, exec)?;
        let mean = mean_from_diagonal(&cfg.f, &kappa, cfg.r, rho, &diag)?;
        let (mut mc_mean, mut mc_stderr, mut exceedance) = (None, None, Vec::new());
        let conc = if cfg.trials > 0 {
            let cov = increment_cov_matrix(&cfg.f, &cfg.kernel, &kappa, cfg.tol, exec)?;
            let conc = concentration_bound(&cov, rho, cfg.r, cfg.eps)?;
            let key = level_seed(cfg.seed, n);
            let stats = exec.try_map_range(cfg.trials, |trial| {
                let dy = cov.factor().sample(key, trial as u64);
                power_variation_statistic(&dy, &kappa, rho, cfg.r)
            })?;
            let (m, se) = mean_and_stderr(&stats);
            mc_mean = Some(m);
            mc_stderr = Some(se);
            exceedance = exceedances(&stats, cfg.r, conc.sigma2);
            for (trial, &s) in stats.iter().enumerate() {
                rows.push(TrialRow {
                    trial,
                    n,
                    m_n: kappa.cells(),
                    mesh: kappa.mesh(),
                    s_n: s,
                    limit,
                    abs_err: (s - limit).abs(),
                    sigma2: conc.sigma2,
                    conc_bound: conc.prob,
                });
            }
            Some(conc)
        } else {
            None
        };
        let conc = match conc {
            Some(c) => c,
            None => {
                let row_sums = row_sum_bounds(&cfg.f, &cfg.kernel, &kappa, &diag, cfg.tol, exec)?;
                concentration_from_rows(&kappa, &row_sums, rho, cfg.r, cfg.eps)?
            }
        };
        levels.push(LevelRecord {
            n,
            m_n: kappa.cells(),
            mesh: kappa.mesh(),
            mean_exact: Some(mean.value),
            mc_mean,
            mc_stderr,
            limit,
            abs_err: (mean.value - limit).abs(),
            t_n: Some(mean.t_n),
            u_n: Some(mean.u_n),
            w_n: Some(mean.w_n),
            sigma2: conc.sigma2,
            conc_bound: conc.prob,
            exceedance,
        });
    }
    Ok((levels, rows))
}

// Upper bounds for the row sums `sum_j |M_ij|` without factorizing: exact for
// constant f, otherwise the exact diagonal plus `||f||_sup^2 V_1(Gamma; cell_i x cell_j)`
// off it. Falls back to the assembled matrix when no cheap V_1 bound exists.
fn row_sum_bounds(
    f: &Integrand,
    kernel: &Kernel,
    kappa: &Partition,
    diag: &[(f64, f64)],
    tol: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let m = kappa.cells();
    if let Some(c) = f.is_constant().then(|| f.eval(0.0)) {
        return exec.try_map_range(m, |i| {
            let (a, b) = kappa.cell(i);
            let mut s = 0.0;
            for j in 0..m {
                let (lo, hi) = kappa.cell(j);
                s += kernel.increment(a, b, lo, hi)?.abs();
            }
            Ok(c * c * s)
        });
    }
    let sup2 = f.sup_norm().powi(2);
    let bounds = exec.try_map_range(m, |i| {
        let (a, b) = kappa.cell(i);
        let mut s = diag[i].0.abs();
        for j in (0..m).filter(|&j| j != i) {
            let (lo, hi) = kappa.cell(j);
            match off_diagonal_v1(kernel, &Rectangle::new(a, b, lo, hi)?)? {
                Some(v) => s += sup2 * v,
                None => return Ok(None),
            }
        }
        Ok(Some(s))
    })?;
    match bounds.into_iter().collect::<Option<Vec<f64>>>() {
        Some(rows) => Ok(rows),
        None => Ok(increment_cov_matrix(f, kernel, kappa, tol, exec)?.row_abs_sums()),
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_almost_sure(
    cfg: &ExperimentConfig,
    rho: &LocalVariance,
    limit: f64,
    exec: Execution,
) -> Result<(Vec<LevelRecord>, Vec<TrialRow>, AlmostSureSummary)> {
    let finest = cfg.sequence.partition(cfg.n_max)?;
    let cov = increment_cov_matrix(&cfg.f, &cfg.kernel, &finest, cfg.tol, exec)?;
    let kappas: Vec<Partition> = (cfg.n_min..=cfg.n_max)
        .map(|n| cfg.sequence.partition(n))
        .collect::<Result<_>>()?;
    let blocks: Vec<Vec<std::ops::Range<usize>>> =
        kappas.iter().map(|k| finest.coarse_blocks(k)).collect::<Result<_>>()?;
    let concs: Vec<Concentration> = kappas
        .iter()
        .map(|k| {
            let agg = cov.aggregate(k)?;
            let rows: Vec<f64> = agg.row_iter().map(|row| row.iter().map(|x| x.abs()).sum()).collect();
            concentration_from_rows(k, &rows, rho, cfg.r, cfg.eps)
        })
        .collect::<Result<_>>()?;

    // trajectories[trial][level]
    let trajectories: Vec<Vec<f64>> = exec.try_map_range(cfg.trials, |trial| {
        let dy = cov.factor().sample(cfg.seed, trial as u64);
        kappas
            .iter()
            .zip(&blocks)
            .map(|(kappa, blocks)| {
                let coarse: Vec<f64> = blocks.iter().map(|b| dy[b.clone()].iter().sum()).collect();
                power_variation_statistic(&coarse, kappa, rho, cfg.r)
            })
            .collect()
    })?;

    let mut rows = Vec::with_capacity(cfg.trials * kappas.len());
    for (trial, traj) in trajectories.iter().enumerate() {
        for (l, kappa) in kappas.iter().enumerate() {
            rows.push(TrialRow {
                trial,
                n: cfg.n_min + l,
                m_n: kappa.cells(),
                mesh: kappa.mesh(),
                s_n: traj[l],
                limit,
                abs_err: (traj[l] - limit).abs(),
                sigma2: concs[l].sigma2,
                conc_bound: concs[l].prob,
            });
        }
    }

    let mut levels = Vec::with_capacity(kappas.len());
    let mut consistent = true;
    for (l, kappa) in kappas.iter().enumerate() {
        let stats: Vec<f64> = trajectories.iter().map(|t| t[l]).collect();
        let (m, se) = mean_and_stderr(&stats);
        let mut errs: Vec<f64> = stats.iter().map(|s| (s - limit).abs()).collect();
        let exceedance = exceedances(&stats, cfg.r, concs[l].sigma2);
        consistent &= exceedance.iter().all(|&(_, emp, bound)| emp <= bound);
        levels.push(LevelRecord {
            n: cfg.n_min + l,
            m_n: kappa.cells(),
            mesh: kappa.mesh(),
            mean_exact: None,
            mc_mean: Some(m),
            mc_stderr: Some(se),
            limit,
            abs_err: median(&mut errs),
            t_n: None,
            u_n: None,
            w_n: None,
            sigma2: concs[l].sigma2,
            conc_bound: concs[l].prob,
            exceedance,
        });
    }

    let tolerance = cfg.as_tolerance;
    let tail_start = (cfg.n_max / 2).max(cfg.n_min);
    let settled = trajectories
        .iter()
        .filter(|t| {
            t.iter()
                .enumerate()
                .filter(|(l, _)| cfg.n_min + l >= tail_start)
                .all(|(_, s)| (s - limit).abs() < tolerance)
        })
        .count();
    let final_within = trajectories
        .iter()
        .filter(|t| (t[t.len() - 1] - limit).abs() < tolerance)
        .count();
    let summary = AlmostSureSummary {
        tolerance,
        settled,
        final_within,
        trials: cfg.trials,
        passes: settled as f64 >= 0.95 * cfg.trials as f64,
        concentration_consistent: consistent,
    };
    Ok((levels, rows, summary))
}
