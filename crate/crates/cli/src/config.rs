use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gladyshev_core::gladyshev::SequenceRule;
use gladyshev_core::{Integrand, Kernel, KernelConfig, LocalVariance, Piece};

use crate::CliError;

/// One run, as read from a TOML file and completed with defaults and
/// command-line overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    /// Piecewise polynomial `f`; `f = 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrand: Option<Vec<Piece>>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub pvar: PvarSection,
    #[serde(default)]
    pub moment: MomentSection,
    #[serde(default)]
    pub orey: OreySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "two")]
    pub r: f64,
    #[serde(rename = "N", default = "ten")]
    pub n_max: usize,
    #[serde(default = "one")]
    pub n_min: usize,
    /// Defaults to 0 for `mean` and 100 for `as-experiment`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "tol")]
    pub tol: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default = "as_tolerance")]
    pub as_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<LocalVariance>,
    #[serde(default = "dyadic")]
    pub sequence: SequenceRule,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            r: two(),
            n_max: ten(),
            n_min: one(),
            trials: None,
            seed: 0,
            tol: tol(),
            eps: eps(),
            as_tolerance: as_tolerance(),
            rho: None,
            sequence: dyadic(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Random points per identity.
    #[serde(default = "thousand")]
    pub points: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    /// Size of the random grid for the Gram-matrix check.
    #[serde(default = "sixty_four")]
    pub gram_size: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            points: thousand(),
            seed: one_u64(),
            gram_size: sixty_four(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvarSection {
    /// `[a, b, c, d]`; the full square by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<[f64; 4]>,
    /// Defaults to the kernel's variation index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ByParts,
    RiemannStieltjes,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<[f64; 4]>,
    #[serde(default = "moment_tol")]
    pub tol: f64,
    #[serde(default = "by_parts")]
    pub route: Route,
    /// `(p, q)` for the second-moment bound check on diagonal squares.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub young: Option<[f64; 2]>,
}

impl Default for MomentSection {
    fn default() -> Self {
        MomentSection {
            rect: None,
            tol: moment_tol(),
            route: by_parts(),
            young: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OreySection {
    /// Strictly decreasing widths; `T 2^{-j}`, `j = 4..=13` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
}

fn two() -> f64 {
    2.0
}
fn ten() -> usize {
    10
}
fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn thousand() -> usize {
    1000
}
fn sixty_four() -> usize {
    64
}
fn tol() -> f64 {
    1e-9
}
fn moment_tol() -> f64 {
    1e-10
}
fn eps() -> f64 {
    0.1
}
fn as_tolerance() -> f64 {
    0.15
}
fn dyadic() -> SequenceRule {
    SequenceRule::Dyadic
}
fn by_parts() -> Route {
    Route::ByParts
}

fn invalid(field: &str, value: impl std::fmt::Display, reason: &str) -> CliError {
    CliError::Validation(format!("{field} = {value}: {reason}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if !(e.r > 0.0 && e.r.is_finite()) {
            return Err(invalid("experiment.r", e.r, "must be positive"));
        }
        if e.n_min == 0 || e.n_min > e.n_max {
            return Err(invalid("experiment.n_min", e.n_min, "must satisfy 1 <= n_min <= N"));
        }
        if e.n_max > 30 {
            return Err(invalid("experiment.N", e.n_max, "must be at most 30"));
        }
        if e.trials.is_some_and(|t| t > 1_000_000) {
            return Err(invalid(
                "experiment.trials",
                e.trials.unwrap_or(0),
                "must be at most 1000000",
            ));
        }
        for (name, v) in [
            ("experiment.tol", e.tol),
            ("experiment.eps", e.eps),
            ("experiment.as_tolerance", e.as_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, v, "must be positive"));
            }
        }
        if self.verify.points == 0 || self.verify.gram_size < 2 {
            return Err(invalid(
                "verify.points",
                self.verify.points,
                "needs points >= 1 and gram_size >= 2",
            ));
        }
        if !(self.moment.tol > 0.0) {
            return Err(invalid("moment.tol", self.moment.tol, "must be positive"));
        }
        if let Some(p) = self.pvar.p {
            if !(p >= 1.0) {
                return Err(invalid("pvar.p", p, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn build_kernel(&self, base: &Path) -> Result<Kernel, CliError> {
        self.kernel
            .build_relative_to(base)
            .map_err(|e| CliError::Validation(format!("kernel: {e}")))
    }

    pub fn build_integrand(&self, horizon: f64) -> Result<Integrand, CliError> {
        let f = match &self.integrand {
            Some(pieces) => Integrand::new(pieces.clone(), horizon),
            None => Integrand::constant(1.0, horizon),
        };
        f.map_err(|e| CliError::Validation(format!("integrand: {e}")))
    }
}
