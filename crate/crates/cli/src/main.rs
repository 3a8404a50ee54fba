//! `gladyshev`: kernel identity checks, p-variation brackets, second moments,
//! Orey-index estimates and the power-variation experiments, driven by a
//! TOML run file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use gladyshev_core::gladyshev::{run_experiment, ExperimentConfig, ExperimentReport, Mode, PartitionSequence};
use gladyshev_core::kernels::estimate_orey_index;
use gladyshev_core::pvar::vp_rect;
use gladyshev_core::rs_integral::{integral_bound_check, qm_moment, qm_moment_by_parts};
use gladyshev_core::{Error, Execution, Rectangle};

use config::{Route, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad input; exit status 2.
    Validation(String),
    /// Numerical breakdown or I/O failure; exit status 3.
    Failure(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Failure(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failure(format!("csv: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gladyshev",
    version,
    about = "Power-variation limit theorems for Gaussian q.m. integrals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides experiment.seed and verify.seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides experiment.trials.
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    /// Omit timestamps and wall times from every artifact.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Identity, sandwich and sign checks for the configured kernel.
    VerifyKernel,
    /// Bracket for V_p of the covariance over a rectangle.
    Pvar,
    /// Second moment of the q.m. integral over a rectangle.
    Moment,
    /// Exact and Monte Carlo means of the power-variation statistic.
    Mean,
    /// Almost-sure surrogate on nested dyadic partitions.
    AsExperiment,
    /// Log-log regression estimate of the Orey index.
    EstimateOrey,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::VerifyKernel => "verify-kernel",
            Command::Pvar => "pvar",
            Command::Moment => "moment",
            Command::Mean => "mean",
            Command::AsExperiment => "as-experiment",
            Command::EstimateOrey => "estimate-orey",
        }
    }
}

struct Output<'a> {
    dir: &'a Path,
    deterministic: bool,
}

impl Output<'_> {
    fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut file = fs::File::create(self.dir.join(name))?;
        if !self.deterministic {
            writeln!(file, "# generated_unix={}", unix_time())?;
        }
        let mut w = csv::Writer::from_writer(file);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// What a command produced: the one-line summary, the JSON result and
/// whether every check passed.
struct Outcome {
    summary: String,
    result: Value,
    ok: bool,
}

fn rectangle(rect: Option<[f64; 4]>, horizon: f64, field: &str) -> Result<Rectangle, CliError> {
    let [a, b, c, d] = rect.unwrap_or([0.0, horizon, 0.0, horizon]);
    Rectangle::new(a, b, c, d).map_err(|e| CliError::Validation(format!("{field}: {e}")))
}

fn run_verify(cfg: &RunConfig, base: &Path, out: &Output) -> Result<Outcome, CliError> {
    let kernel = cfg.build_kernel(base)?;
    let checks = verify::identity_suite(&kernel, cfg.verify.points, cfg.verify.gram_size, cfg.verify.seed)?;
    out.csv("residuals.csv", &checks)?;
    let ok = checks.iter().all(|c| c.pass);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let key = match checks.iter().find(|c| c.name == "lei_nualart_residual") {
        Some(c) => format!("lei_nualart_residual={:.3e}", c.value),
        None => format!("checks={}", checks.len()),
    };
    let verdict = if ok {
        "pass".to_string()
    } else {
        format!("FAILED[{}]", failed.join(","))
    };
    Ok(Outcome {
        summary: format!("kernel={} {key} {verdict}", kernel.name()),
        result: json!({ "kernel": kernel.name(), "checks": checks, "pass": ok }),
        ok,
    })
}

fn run_pvar(cfg: &RunConfig, base: &Path, exec: Execution) -> Result<Outcome, CliError> {
    let kernel = cfg.build_kernel(base)?;
    let q = rectangle(cfg.pvar.rect, kernel.horizon(), "pvar.rect")?;
    let p = match cfg.pvar.p.or_else(|| kernel.p()) {
        Some(p) => p,
        None => return Err(CliError::Validation("pvar.p is required for this kernel".into())),
    };
    let bracket = vp_rect(&kernel, &q, p, exec)?;
    Ok(Outcome {
        summary: format!(
            "kernel={} p={p} lower={:.6e} upper={:.6e} exact={}",
            kernel.name(),
            bracket.lower,
            bracket.upper,
            bracket.exact
        ),
        result: json!({ "kernel": kernel.name(), "rect": q, "p": p, "sign_structure": kernel.sign_structure(), "bracket": bracket }),
        ok: true,
    })
}

#[derive(Serialize)]
struct TraceRow {
    level: usize,
    value: f64,
}

fn run_moment(cfg: &RunConfig, base: &Path, out: &Output) -> Result<Outcome, CliError> {
    let kernel = cfg.build_kernel(base)?;
    let f = cfg.build_integrand(kernel.horizon())?;
    let q = rectangle(cfg.moment.rect, kernel.horizon(), "moment.rect")?;
    let tol = cfg.moment.tol;
    let mut result = json!({ "kernel": kernel.name(), "rect": q, "tol": tol });
    let mut value = None;
    if matches!(cfg.moment.route, Route::ByParts | Route::Both) {
        let v = qm_moment_by_parts(&f, &kernel, &q, tol)?;
        result["by_parts"] = json!(v);
        value = Some(v);
    }
    if matches!(cfg.moment.route, Route::RiemannStieltjes | Route::Both) {
        let m = qm_moment(&f, &kernel, &q, tol)?;
        let rows: Vec<TraceRow> = m
            .trace
            .iter()
            .enumerate()
            .map(|(level, &value)| TraceRow { level, value })
            .collect();
        out.csv("trace.csv", &rows)?;
        result["riemann_stieltjes"] = json!(m);
        value.get_or_insert(m.value);
    }
    let mut ok = true;
    if let Some([p, qe]) = cfg.moment.young {
        if q.is_diagonal_square() {
            let check = integral_bound_check(&f, &kernel, q.a, q.b, p, qe)?;
            ok = check.holds;
            result["bound"] = json!(check);
        } else {
            return Err(CliError::Validation(
                "moment.young needs a diagonal square moment.rect".into(),
            ));
        }
    }
    Ok(Outcome {
        summary: format!("kernel={} moment={:.12e}", kernel.name(), value.unwrap_or(f64::NAN)),
        result,
        ok,
    })
}

#[derive(Serialize)]
struct OreyRow {
    h: f64,
    sigma: f64,
}

fn run_orey(cfg: &RunConfig, base: &Path, out: &Output) -> Result<Outcome, CliError> {
    let kernel = cfg.build_kernel(base)?;
    let t = kernel.horizon();
    let widths = cfg
        .orey
        .widths
        .clone()
        .unwrap_or_else(|| (4..=13).map(|j| t * 0.5f64.powi(j)).collect());
    let est = estimate_orey_index(&kernel, &widths, cfg.orey.anchor)?;
    let rows = widths
        .iter()
        .map(|&h| {
            Ok(OreyRow {
                h,
                sigma: kernel.incremental_variance(est.anchor, est.anchor + h)?.sqrt(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    out.csv("orey.csv", &rows)?;
    let declared = kernel.orey_index();
    Ok(Outcome {
        summary: format!(
            "kernel={} gamma_hat={:.6} se={:.2e} gamma={}",
            kernel.name(),
            est.gamma,
            est.std_error,
            declared.map_or("n/a".to_string(), |g| g.to_string())
        ),
        result: json!({ "kernel": kernel.name(), "estimate": est, "declared": declared }),
        ok: true,
    })
}

#[derive(Serialize)]
struct LevelRow {
    n: usize,
    m_n: usize,
    mesh: f64,
    #[serde(rename = "E_S_n")]
    mean_exact: Option<f64>,
    mc_mean: Option<f64>,
    mc_stderr: Option<f64>,
    limit: f64,
    abs_err: f64,
    #[serde(rename = "T_n")]
    t_n: Option<f64>,
    #[serde(rename = "U_n")]
    u_n: Option<f64>,
    #[serde(rename = "W_n")]
    w_n: Option<f64>,
    sigma2: f64,
    conc_bound: f64,
}

#[derive(Serialize)]
struct ExceedanceRow {
    n: usize,
    eps: f64,
    empirical: f64,
    bound: f64,
}

fn write_experiment(rep: &ExperimentReport, out: &Output) -> Result<(), CliError> {
    let levels: Vec<LevelRow> = rep
        .levels
        .iter()
        .map(|l| LevelRow {
            n: l.n,
            m_n: l.m_n,
            mesh: l.mesh,
            mean_exact: l.mean_exact,
            mc_mean: l.mc_mean,
            mc_stderr: l.mc_stderr,
            limit: l.limit,
            abs_err: l.abs_err,
            t_n: l.t_n,
            u_n: l.u_n,
            w_n: l.w_n,
            sigma2: l.sigma2,
            conc_bound: l.conc_bound,
        })
        .collect();
    out.csv("levels.csv", &levels)?;
    let exceedance: Vec<ExceedanceRow> = rep
        .levels
        .iter()
        .flat_map(|l| {
            l.exceedance.iter().map(move |&(eps, empirical, bound)| ExceedanceRow {
                n: l.n,
                eps,
                empirical,
                bound,
            })
        })
        .collect();
    out.csv("exceedance.csv", &exceedance)?;
    out.csv("trials.csv", &rep.rows)
}

fn run_experiment_command(
    cfg: &RunConfig,
    base: &Path,
    mode: Mode,
    exec: Execution,
    out: &Output,
) -> Result<Outcome, CliError> {
    let kernel = cfg.build_kernel(base)?;
    let f = cfg.build_integrand(kernel.horizon())?;
    let e = &cfg.experiment;
    let sequence = PartitionSequence::new(e.sequence.clone(), kernel.horizon())
        .map_err(|err| CliError::Validation(format!("experiment.sequence: {err}")))?;
    let config = ExperimentConfig {
        kernel,
        f,
        r: e.r,
        rho: e.rho,
        sequence,
        mode,
        n_min: e.n_min,
        n_max: e.n_max,
        trials: e.trials.unwrap_or(0),
        seed: e.seed,
        tol: e.tol,
        eps: e.eps,
        as_tolerance: e.as_tolerance,
    };
    let rep = run_experiment(&config, exec)?;
    write_experiment(&rep, out)?;
    let last = rep.levels.last().map_or(f64::NAN, |l| l.abs_err);
    let (summary, ok) = match &rep.almost_sure {
        Some(s) => (
            format!(
                "kernel={} limit={:.6} final_within={}/{} settled={}/{} concentration_consistent={}",
                rep.kernel, rep.limit, s.final_within, s.trials, s.settled, s.trials, s.concentration_consistent
            ),
            s.concentration_consistent,
        ),
        None => (
            format!("kernel={} limit={:.6} final_abs_err={last:.3e}", rep.kernel, rep.limit),
            true,
        ),
    };
    let mut result = serde_json::to_value(&rep).map_err(|err| CliError::Failure(err.to_string()))?;
    // per-trial rows live in trials.csv
    if let Some(obj) = result.as_object_mut() {
        obj.remove("rows");
    }
    Ok(Outcome { summary, result, ok })
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let start = Instant::now();
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let (mut cfg, base) = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
        cfg.verify.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.experiment.trials = Some(trials);
    }
    if cli.command == Command::AsExperiment && cfg.experiment.trials.is_none() {
        cfg.experiment.trials = Some(100);
    }
    if cli.command == Command::Mean && cfg.experiment.trials.is_none() {
        cfg.experiment.trials = Some(0);
    }
    cfg.validate()?;

    let exec = match cli.threads {
        Some(0) => return Err(CliError::Validation("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Failure(format!("thread pool: {e}")))?;
            let _ = n;
            Execution::Parallel
        }
        None => Execution::default(),
    };

    fs::create_dir_all(&cli.out)?;
    let out = Output {
        dir: &cli.out,
        deterministic: cli.deterministic,
    };
    let outcome = match cli.command {
        Command::VerifyKernel => run_verify(&cfg, &base, &out)?,
        Command::Pvar => run_pvar(&cfg, &base, exec)?,
        Command::Moment => run_moment(&cfg, &base, &out)?,
        Command::EstimateOrey => run_orey(&cfg, &base, &out)?,
        Command::Mean => run_experiment_command(&cfg, &base, Mode::Mean, exec, &out)?,
        Command::AsExperiment => run_experiment_command(&cfg, &base, Mode::AlmostSure, exec, &out)?,
    };
    let wall = start.elapsed().as_secs_f64();
    let mut report = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "result": outcome.result,
        "pass": outcome.ok,
    });
    if !cli.deterministic {
        report["generated_unix"] = json!(unix_time());
        report["wall_time_s"] = json!(wall);
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failure(e.to_string()))?;
    fs::write(cli.out.join("report.json"), text + "\n")?;
    println!("{} {} wall={wall:.3}s", cli.command.name(), outcome.summary);
    Ok(outcome.ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
