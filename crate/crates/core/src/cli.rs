//! Config-driven experiment runner behind the `accel-flow` binary.
//!
//! Commands: `simulate`, `check-assumptions`, `reproduce-table`, `smooth-demo`.
//! Flags: `--config PATH`, `--out DIR`, `--seed N`, `--quiet`.
//!
//! Exit codes: 0 every check passed, 1 a check failed, 2 configuration
//! error, 3 numerical failure.
//!
//! Configs are TOML. A complete example:
//!
//! ```toml
//! seed = 7
//!
//! [problem]
//! id = "quadratic"          # quadratic | flat_quadratic | l1_denoise
//! diag = [1.0, 4.0]         # or q = [[1.0, 0.0], [0.0, 4.0]]
//! b = [0.0, 0.0]
//!
//! [schedule]
//! family = "constant_damping"   # constant_damping | hyperbolic | polynomial_damping
//! d = 2.0
//! sigma = 1.0
//! # c = 3.0, rate_scale = 2.0, nu_shift = 1.0
//!
//! [integrator]
//! t0 = 0.0
//! t_end = 20.0
//! step = 1e-3
//! record_stride = 10
//! x0 = [1.0, 1.0]
//!
//! [lyapunov]
//! tol_mono = 1e-8
//! fit_model = "exponential"
//! fit_window = [10.0, 20.0]
//! min_rate = 0.95
//!
//! [output]
//! formats = ["csv", "json"]
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bregman::{check_uniform_convexity, SamplingRegion};
use crate::dynamics::{format_number, integrate_with, IntegratorConfig, RunOptions, Trajectory, STIFFNESS_LIMIT};
use crate::lyapunov::{
    bound_check_with, fit_rate, integral_estimates_with, monotonicity_report_with, BoundReport, FitModel,
    FittedRate, IntegralReport, LyapunovVariant, MonotonicityReport, TimeInterval, DEFAULT_TOL_BOUND,
    DEFAULT_TOL_INT, DEFAULT_TOL_MONO,
};
use crate::problems::{self, ProblemSpec};
use crate::schedules::{
    check_general, check_general2, check_para, ConditionReport, PredictedRate, ScheduleFamily, TimeGrid,
};
use crate::smoothing::{
    certify_smooth_approx, huber_l1_denoise, random_samples, rate_preserving_mu, smoothed_flow, CertReport,
    DecayKind, SmoothApproximation, SmoothingSchedule,
};
use crate::{Error, Result, Vector};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "accel-flow", version, about = "Simulate and certify accelerated gradient flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one flow and check its Lyapunov certificates.
    Simulate(CommonArgs),
    /// Evaluate the parameter conditions of a schedule on a time grid.
    CheckAssumptions(CommonArgs),
    /// Fit convergence rates for the canonical family grid.
    ReproduceTable(CommonArgs),
    /// Run the smoothing pipeline on the l1 denoising problem.
    SmoothDemo(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: Option<ProblemBlock>,
    pub schedule: Option<ScheduleBlock>,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub lyapunov: LyapunovBlock,
    #[serde(default)]
    pub check: CheckBlock,
    pub smoothing: Option<SmoothingBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub id: String,
    pub q: Option<Vec<Vec<f64>>>,
    pub diag: Option<Vec<f64>>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub family: String,
    pub d: Option<f64>,
    pub sigma: Option<f64>,
    pub c: Option<f64>,
    pub rate_scale: Option<f64>,
    pub nu_shift: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub record_stride: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    /// `auto`, `standard` or `symmetric`.
    pub variant: Option<String>,
    pub tol_mono: Option<f64>,
    pub tol_bound: Option<f64>,
    pub tol_int: Option<f64>,
    pub fit_model: Option<FitModel>,
    pub fit_window: Option<[f64; 2]>,
    /// When set, the fitted rate must reach this value.
    pub min_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    /// `auto`, `general`, `general2` or `para`.
    pub system: Option<String>,
    pub grid_start: Option<f64>,
    pub grid_end: Option<f64>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingBlock {
    pub approximation: Option<String>,
    /// `rate_preserving` or `constant`.
    pub mu: Option<String>,
    pub kind: Option<DecayKind>,
    pub epsilon: Option<f64>,
    pub mu_value: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub formats: Option<Vec<String>>,
}

/// A configuration problem, optionally anchored to a line of the source file.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

/// A config together with its source text, for line-anchored messages.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: Option<PathBuf>,
    source: String,
}

impl LoadedConfig {
    pub fn parse(source: &str, path: Option<PathBuf>) -> std::result::Result<Self, String> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| source[..s.start].lines().count().max(1));
            anchor(path.as_deref(), line, e.message())
        })?;
        Ok(Self {
            config,
            path,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let source = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&source, Some(path.to_path_buf()))
    }

    /// Line of `key` inside `[section]` (top level when `section` is empty).
    pub fn locate(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, raw) in self.source.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                if key.is_empty() && current == section {
                    return Some(i + 1);
                }
                continue;
            }
            if current == section {
                if let Some(rest) = line.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn error(&self, section: &str, key: &str, message: impl Into<String>) -> String {
        let line = self.locate(section, key).or_else(|| self.locate(section, ""));
        let what = if key.is_empty() {
            format!("[{section}]")
        } else {
            format!("[{section}].{key}")
        };
        anchor(self.path.as_deref(), line, &format!("{what}: {}", message.into()))
    }
}

fn anchor(path: Option<&Path>, line: Option<usize>, message: &str) -> String {
    let file = path.map_or("<config>".to_string(), |p| p.display().to_string());
    match line {
        Some(l) => format!("{file}:{l}: {message}"),
        None => format!("{file}: {message}"),
    }
}

/// Outcome of a command, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } | Error::Integration { .. } | Error::Divergence { .. } => {
                Failure::Numerical(e.to_string())
            }
            other => Failure::Config(other.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn vector(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn matrix(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("matrix rows must be non-empty and of equal length".into());
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

impl LoadedConfig {
    pub fn problem(&self) -> CmdResult<ProblemSpec> {
        let p = self
            .config
            .problem
            .as_ref()
            .ok_or_else(|| Failure::Config(self.error("problem", "", "section is required")))?;
        let bad = |key: &str, msg: String| Failure::Config(self.error("problem", key, msg));
        let spec = match p.id.as_str() {
            "quadratic" => {
                let q = match (&p.q, &p.diag) {
                    (Some(q), None) => matrix(q).map_err(|m| bad("q", m))?,
                    (None, Some(d)) => DMatrix::from_diagonal(&vector(d)),
                    _ => return Err(bad("q", "give exactly one of `q` or `diag`".into())),
                };
                let b = p.b.as_deref().map(vector).unwrap_or_else(|| Vector::zeros(q.nrows()));
                problems::quadratic(q, b).map_err(|e| bad("q", e.to_string()))?
            }
            "flat_quadratic" => {
                let a = matrix(p.a.as_ref().ok_or_else(|| bad("a", "is required".into()))?).map_err(|m| bad("a", m))?;
                let b = p.b.as_deref().map(vector).unwrap_or_else(|| Vector::zeros(a.nrows()));
                problems::flat_quadratic(a, b).map_err(|e| bad("a", e.to_string()))?
            }
            "l1_denoise" => {
                let y = vector(p.y.as_deref().ok_or_else(|| bad("y", "is required".into()))?);
                problems::l1_denoise(y, p.w.unwrap_or(1.0)).map_err(|e| bad("w", e.to_string()))?
            }
            "canonical_strongly_convex" => problems::canonical_strongly_convex(),
            "canonical_flat" => problems::canonical_flat(),
            other => return Err(bad("id", format!("unknown problem `{other}`"))),
        };
        Ok(spec)
    }

    pub fn family(&self) -> CmdResult<ScheduleFamily> {
        let s = self
            .config
            .schedule
            .as_ref()
            .ok_or_else(|| Failure::Config(self.error("schedule", "", "section is required")))?;
        let bad = |key: &str, msg: String| Failure::Config(self.error("schedule", key, msg));
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| bad(key, "is required for this family".into()));
        let fam = match s.family.as_str() {
            "constant_damping" => ScheduleFamily::constant_damping(need(s.d, "d")?, need(s.sigma, "sigma")?),
            "hyperbolic" => ScheduleFamily::hyperbolic(need(s.sigma, "sigma")?),
            "polynomial_damping" => ScheduleFamily::polynomial(need(s.c, "c")?),
            other => return Err(bad("family", format!("unknown family `{other}`"))),
        }
        .map_err(|e| bad("family", e.to_string()))?;
        let mut fam = fam;
        if let Some(k) = s.rate_scale {
            if !(k > 0.0 && k.is_finite()) {
                return Err(bad("rate_scale", format!("must be positive, got {k}")));
            }
            fam = fam.with_rate_scale(k);
        }
        if let Some(c) = s.nu_shift {
            fam = fam.with_nu_shift(c);
        }
        Ok(fam)
    }

    fn positive(&self, section: &str, key: &str, v: Option<f64>, default: f64) -> CmdResult<f64> {
        let v = v.unwrap_or(default);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Failure::Config(self.error(section, key, format!("must be positive, got {v}"))))
        }
    }

    pub fn integrator(&self, family: &ScheduleFamily) -> CmdResult<IntegratorConfig> {
        let b = &self.config.integrator;
        let t0 = b.t0.unwrap_or_else(|| family.default_t0());
        let t_end = b.t_end.unwrap_or(match family.predicted_rate() {
            Some(PredictedRate::Exponential(_)) => 20.0,
            _ => 100.0,
        });
        let step = self.positive("integrator", "step", b.step, crate::dynamics::DEFAULT_STEP)?;
        let cfg = IntegratorConfig {
            t0,
            t_end,
            step,
            record_stride: b.record_stride.unwrap_or(10),
            method: crate::dynamics::Method::Rk4,
        };
        cfg.validate()
            .map_err(|e| Failure::Config(self.error("integrator", "t_end", e.to_string())))?;
        family
            .sample(t0)
            .map_err(|e| Failure::Config(self.error("integrator", "t0", e.to_string())))?;
        Ok(cfg)
    }

    fn initial_point(&self, problem: &ProblemSpec) -> CmdResult<(Vector, Vector)> {
        let n = problem.dim();
        let b = &self.config.integrator;
        let x0 = b.x0.as_deref().map(vector).unwrap_or_else(|| problem.minimizer().add_scalar(1.0));
        let v0 = b.v0.as_deref().map(vector).unwrap_or_else(|| Vector::zeros(n));
        for (key, v) in [("x0", &x0), ("v0", &v0)] {
            if v.len() != n {
                return Err(Failure::Config(self.error(
                    "integrator",
                    key,
                    format!("has dimension {}, the problem has {n}", v.len()),
                )));
            }
        }
        Ok((x0, v0))
    }

    fn tolerances(&self) -> CmdResult<(f64, f64, f64)> {
        let l = &self.config.lyapunov;
        Ok((
            self.positive("lyapunov", "tol_mono", l.tol_mono, DEFAULT_TOL_MONO)?,
            self.positive("lyapunov", "tol_bound", l.tol_bound, DEFAULT_TOL_BOUND)?,
            self.positive("lyapunov", "tol_int", l.tol_int, DEFAULT_TOL_INT)?,
        ))
    }

    fn formats(&self) -> CmdResult<(bool, bool)> {
        let formats = self
            .config
            .output
            .formats
            .clone()
            .unwrap_or_else(|| vec!["csv".into(), "json".into()]);
        let mut out = (false, false);
        for f in &formats {
            match f.as_str() {
                "csv" => out.0 = true,
                "json" => out.1 = true,
                other => {
                    return Err(Failure::Config(self.error("output", "formats", format!("unknown format `{other}`"))))
                }
            }
        }
        Ok(out)
    }
}

/// Console and file output for one command invocation.
struct Session {
    out: PathBuf,
    quiet: bool,
}

impl Session {
    fn new(args: &CommonArgs, cfg: &LoadedConfig, default_dir: &str) -> CmdResult<Self> {
        let out = args
            .out
            .clone()
            .or_else(|| cfg.config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from(default_dir));
        std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
        Ok(Self { out, quiet: args.quiet })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("warning: {}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> CmdResult<()> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> CmdResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        text.push('\n');
        self.write(name, &text)
    }

    fn write_trajectory(&self, traj: &Trajectory, csv: bool, json: bool) -> CmdResult<()> {
        if csv {
            traj.save_csv(&self.out.join("trajectory.csv"))?;
        }
        if json {
            self.write_json("trajectory.json", &traj.to_json())?;
        }
        Ok(())
    }
}

fn stiffness_warning(cfg: &IntegratorConfig, family: &ScheduleFamily) -> Option<String> {
    let s = cfg.stiffness(family).ok()?;
    (s > STIFFNESS_LIMIT).then(|| {
        format!(
            "step * e^alpha(t0) = {s:.3} exceeds {STIFFNESS_LIMIT}; RK4 may be unstable near t0 = {}",
            cfg.t0
        )
    })
}

/// Certificates of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RunChecks {
    pub monotonicity: MonotonicityReport,
    pub bounds: BoundReport,
    pub integrals: IntegralReport,
    pub max_ode_residual: Option<f64>,
}

impl RunChecks {
    pub fn evaluate(traj: &Trajectory, tol_mono: f64, tol_bound: f64, tol_int: f64) -> Self {
        Self {
            monotonicity: monotonicity_report_with(traj, tol_mono),
            bounds: bound_check_with(traj, tol_bound),
            integrals: integral_estimates_with(traj, tol_int),
            max_ode_residual: traj.max_ode_residual(),
        }
    }

    pub fn pass(&self) -> bool {
        self.monotonicity.pass && self.bounds.pass && self.integrals.pass
    }
}

fn default_fit_model(family: &ScheduleFamily) -> FitModel {
    match family.predicted_rate() {
        Some(PredictedRate::Exponential(_)) => FitModel::Exponential,
        Some(PredictedRate::Polynomial(_)) => FitModel::Polynomial,
        None => FitModel::Exponential,
    }
}

fn simulate(args: &CommonArgs, cfg: &LoadedConfig) -> CmdResult<bool> {
    let problem = cfg.problem()?;
    if problem.as_l1().is_some() {
        return Err(Failure::Config(cfg.error(
            "problem",
            "id",
            "l1_denoise is nonsmooth; run it through smooth-demo",
        )));
    }
    let family = cfg.family()?;
    let icfg = cfg.integrator(&family)?;
    let (x0, v0) = cfg.initial_point(&problem)?;
    let (tol_mono, tol_bound, tol_int) = cfg.tolerances()?;
    let (csv, json_out) = cfg.formats()?;
    let variant = match cfg.config.lyapunov.variant.as_deref() {
        None | Some("auto") => None,
        Some("standard") => Some(LyapunovVariant::Standard),
        Some("symmetric") => Some(LyapunovVariant::Symmetric),
        Some(other) => {
            return Err(Failure::Config(cfg.error("lyapunov", "variant", format!("unknown variant `{other}`"))))
        }
    };
    let session = Session::new(args, cfg, "out")?;
    let mut warnings = Vec::new();
    if let Some(w) = stiffness_warning(&icfg, &family) {
        session.warn(&w);
        warnings.push(w);
    }
    let opts = RunOptions {
        sigma: Some(problem.sigma),
        variant,
    };
    let mut traj = integrate_with(
        problem.generator.as_ref(),
        problem.objective.as_ref(),
        &family,
        &icfg,
        &x0,
        &v0,
        &opts,
    )?;
    traj.problem = problem.identifier.clone();
    let checks = RunChecks::evaluate(&traj, tol_mono, tol_bound, tol_int);
    let l = &cfg.config.lyapunov;
    let model = l.fit_model.unwrap_or_else(|| default_fit_model(&family));
    let window = match l.fit_window {
        Some([a, b]) => TimeInterval::new(a, b),
        None => TimeInterval::last_half(&traj),
    };
    let fit = fit_rate(&traj, model, window);
    let fit_pass = match (l.min_rate, &fit) {
        (None, _) => true,
        (Some(min), Ok(f)) => f.rate() >= min,
        (Some(_), Err(_)) => false,
    };
    let pass = checks.pass() && fit_pass;
    let summary = json!({
        "command": "simulate",
        "problem": traj.problem,
        "schedule": traj.schedule,
        "variant": traj.variant,
        "sigma": traj.sigma,
        "seed": args.seed.unwrap_or(cfg.config.seed),
        "v0": traj.v0(),
        "final_gap": traj.last().diag.f_gap,
        "checks": checks,
        "fit": match &fit {
            Ok(f) => json!({"result": f, "rate": f.rate(), "min_rate": l.min_rate, "pass": fit_pass}),
            Err(e) => json!({"error": e.to_string(), "min_rate": l.min_rate, "pass": fit_pass}),
        },
        "warnings": warnings,
        "pass": pass,
    });
    session.write_trajectory(&traj, csv, json_out)?;
    session.write_json("summary.json", &summary)?;
    session.say(format!(
        "{} on {}: monotonicity {}, bounds {}, integrals {}, fit {} -> {}",
        traj.schedule,
        traj.problem,
        verdict(checks.monotonicity.pass),
        verdict(checks.bounds.pass),
        verdict(checks.integrals.pass),
        match &fit {
            Ok(f) => format!("{:.4}", f.rate()),
            Err(_) => "n/a".into(),
        },
        verdict(pass)
    ));
    Ok(pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Which inequality system `check-assumptions` evaluates.
pub fn run_condition_check(
    family: &ScheduleFamily,
    sigma: f64,
    symmetric: bool,
    system: Option<&str>,
    grid: &TimeGrid,
) -> Result<ConditionReport> {
    match system {
        None | Some("auto") => {
            if family.uses_symmetric_term() {
                check_general2(family, sigma, symmetric, grid)
            } else {
                check_general(family, sigma, grid)
            }
        }
        Some("general") => check_general(family, sigma, grid),
        Some("general2") => check_general2(family, sigma, symmetric, grid),
        Some("para") => check_para(family, sigma, grid),
        Some(other) => Err(Error::Config(format!("unknown condition system `{other}`"))),
    }
}

fn family_sigma(family: &ScheduleFamily) -> f64 {
    match *family {
        ScheduleFamily::ConstantDamping { sigma, .. } | ScheduleFamily::Hyperbolic { sigma } => sigma,
        _ => 0.0,
    }
}

fn check_assumptions(args: &CommonArgs, cfg: &LoadedConfig) -> CmdResult<bool> {
    let family = cfg.family()?;
    let problem = match cfg.config.problem {
        Some(_) => Some(cfg.problem()?),
        None => None,
    };
    let c = &cfg.config.check;
    let icfg = &cfg.config.integrator;
    let start = c.grid_start.or(icfg.t0).unwrap_or_else(|| family.default_t0().max(0.1));
    let end = c.grid_end.or(icfg.t_end).unwrap_or(20.0);
    let grid = TimeGrid::linspace(start, end, c.grid_points.unwrap_or(1000))
        .map_err(|e| Failure::Config(cfg.error("check", "grid_points", e.to_string())))?;
    let sigma = problem.as_ref().map_or_else(|| family_sigma(&family), |p| p.sigma);
    let symmetric = problem.as_ref().map_or(true, |p| p.generator.is_symmetric());
    let system = c.system.as_deref();
    let report = run_condition_check(&family, sigma, symmetric, system, &grid)
        .map_err(|e| Failure::Config(cfg.error("check", "system", e.to_string())))?;
    let seed = args.seed.unwrap_or(cfg.config.seed);
    let convexity = match &problem {
        Some(p) => Some(check_uniform_convexity(p.objective.as_ref(), p.generator.as_ref(), 1000, seed)?),
        None => None,
    };
    let pass = report.pass && convexity.as_ref().map_or(true, |c| c.pass);
    let session = Session::new(args, cfg, "out")?;
    let (csv, _) = cfg.formats()?;
    if csv {
        let mut text = String::from("t,slack1,slack2,slack3,slack4\n");
        for (t, row) in report.times.iter().zip(&report.slacks) {
            let cols: Vec<String> = std::iter::once(*t).chain(row.iter().copied()).map(format_number).collect();
            text.push_str(&cols.join(","));
            text.push('\n');
        }
        session.write("slacks.csv", &text)?;
    }
    let verdict_json = json!({
        "command": "check-assumptions",
        "schedule": family.label(),
        "system": report.system,
        "sigma": sigma,
        "grid": {"start": start, "end": end, "points": report.times.len()},
        "max_slack": report.max_slack,
        "equality": report.equality,
        "worst_item": report.worst_item,
        "worst_time": report.worst_time,
        "worst_slack": report.worst_slack,
        "tolerance": report.tolerance,
        "conditions_pass": report.pass,
        "convexity": convexity,
        "seed": seed,
        "pass": pass,
    });
    session.write_json("verdict.json", &verdict_json)?;
    session.say(format!(
        "{} ({:?} system): max slacks [{}] -> {}",
        family.label(),
        report.system,
        report.max_slack.iter().map(|s| format!("{s:.3e}")).collect::<Vec<_>>().join(", "),
        verdict(pass)
    ));
    Ok(pass)
}

/// One row of the canonical rate table.
#[derive(Debug, Clone)]
pub struct CanonicalRun {
    pub label: String,
    pub family: ScheduleFamily,
    pub problem: ProblemSpec,
    pub config: IntegratorConfig,
    pub x0: Vector,
    pub window: TimeInterval,
    pub predicted: PredictedRate,
    /// Fitted rate must reach `threshold`.
    pub threshold: f64,
}

impl CanonicalRun {
    pub fn model(&self) -> FitModel {
        match self.predicted {
            PredictedRate::Exponential(_) => FitModel::Exponential,
            PredictedRate::Polynomial(_) => FitModel::Polynomial,
        }
    }
}

/// Start time for the hyperbolic rows, where `step * e^alpha(t0) = 0.04`.
pub const CANONICAL_HYPERBOLIC_T0: f64 = 0.05;

/// The eight canonical `(family, problem)` runs.
pub fn canonical_runs() -> Vec<CanonicalRun> {
    let strong = problems::canonical_strongly_convex();
    let flat = problems::canonical_flat();
    let mut runs = Vec::new();
    let exp_run = |label: String, family: ScheduleFamily, t0: f64| {
        let rate = family.predicted_rate().expect("shipped family").value();
        CanonicalRun {
            label,
            config: IntegratorConfig::new(t0, 20.0, 1e-3).expect("valid").with_record_stride(10),
            family,
            problem: strong.clone(),
            x0: vector(&[1.0, 1.0]),
            window: TimeInterval::new(10.0, 20.0),
            predicted: PredictedRate::Exponential(rate),
            threshold: 0.95 * rate,
        }
    };
    for d in [1.0, 2.0, 4.0] {
        let fam = ScheduleFamily::constant_damping(d, 1.0).expect("valid");
        runs.push(exp_run(format!("constant_damping D={d} sigma=1"), fam, 0.0));
    }
    runs.push(exp_run(
        "hyperbolic sigma=1".into(),
        ScheduleFamily::hyperbolic(1.0).expect("valid"),
        CANONICAL_HYPERBOLIC_T0,
    ));
    let poly_run = |label: String, family: ScheduleFamily, t0: f64, threshold: f64| CanonicalRun {
        label,
        predicted: family.predicted_rate().expect("shipped family"),
        family,
        problem: flat.clone(),
        config: IntegratorConfig::new(t0, 100.0, 1e-3).expect("valid").with_record_stride(10),
        x0: Vector::zeros(3),
        window: TimeInterval::new(10.0, 100.0),
        threshold,
    };
    runs.push(poly_run(
        "hyperbolic sigma=0".into(),
        ScheduleFamily::hyperbolic(0.0).expect("valid"),
        CANONICAL_HYPERBOLIC_T0,
        1.8,
    ));
    for c in [1.5, 3.0, 6.0] {
        let fam = ScheduleFamily::polynomial(c).expect("valid");
        let k = fam.predicted_rate().expect("shipped family").value();
        runs.push(poly_run(format!("polynomial_damping C={c}"), fam, 1.0, 0.9 * k));
    }
    runs
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub label: String,
    pub problem: String,
    pub model: FitModel,
    pub predicted: f64,
    pub threshold: f64,
    pub fitted: FittedRate,
    pub v0: f64,
    pub checks: RunChecks,
    pub rate_pass: bool,
}

impl TableRow {
    pub fn margin(&self) -> f64 {
        self.fitted.rate() - self.threshold
    }
}

/// Integrates one canonical run and fits its rate.
pub fn run_canonical(run: &CanonicalRun) -> Result<(Trajectory, TableRow)> {
    let opts = RunOptions {
        sigma: Some(run.problem.sigma),
        variant: None,
    };
    let mut traj = integrate_with(
        run.problem.generator.as_ref(),
        run.problem.objective.as_ref(),
        &run.family,
        &run.config,
        &run.x0,
        &Vector::zeros(run.x0.len()),
        &opts,
    )?;
    traj.problem = run.problem.identifier.clone();
    let fitted = fit_rate(&traj, run.model(), run.window)?;
    let checks = RunChecks::evaluate(&traj, DEFAULT_TOL_MONO, DEFAULT_TOL_BOUND, DEFAULT_TOL_INT);
    let row = TableRow {
        label: run.label.clone(),
        problem: run.problem.identifier.clone(),
        model: run.model(),
        predicted: run.predicted.value(),
        threshold: run.threshold,
        rate_pass: fitted.rate() >= run.threshold,
        fitted,
        v0: traj.v0(),
        checks,
    };
    Ok((traj, row))
}

/// Runs every canonical row on its own thread, preserving row order.
pub fn reproduce_table() -> Result<Vec<TableRow>> {
    let runs = canonical_runs();
    std::thread::scope(|scope| {
        let handles: Vec<_> = runs.iter().map(|r| scope.spawn(move || run_canonical(r).map(|x| x.1))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("canonical run panicked"))
            .collect()
    })
}

/// Aligned text table with one row per canonical run.
pub fn render_table(rows: &[TableRow]) -> String {
    let header = ["family", "problem", "model", "predicted", "threshold", "fitted", "margin", "V mono", "rate"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.problem.clone(),
                match r.model {
                    FitModel::Exponential => "exp(-r t)".into(),
                    FitModel::Polynomial => "t^-p".into(),
                },
                format!("{:.4}", r.predicted),
                format!("{:.4}", r.threshold),
                format!("{:.4}", r.fitted.rate()),
                format!("{:+.4}", r.margin()),
                verdict(r.checks.monotonicity.pass).into(),
                verdict(r.rate_pass).into(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn cmd_reproduce_table(args: &CommonArgs, cfg: &LoadedConfig) -> CmdResult<bool> {
    let session = Session::new(args, cfg, "out")?;
    let rows = reproduce_table()?;
    let table = render_table(&rows);
    let pass = rows.iter().all(|r| r.rate_pass);
    session.write("table.txt", &table)?;
    session.write_json("table.json", &json!({"command": "reproduce-table", "rows": rows, "pass": pass}))?;
    session.say(table.trim_end());
    session.say(format!("rate table -> {}", verdict(pass)));
    Ok(pass)
}

/// Everything produced by the smoothing pipeline.
#[derive(Debug, Clone)]
pub struct SmoothDemo {
    pub trajectory: Trajectory,
    pub certification: CertReport,
    pub checks: RunChecks,
    pub budget: f64,
}

impl SmoothDemo {
    pub fn pass(&self) -> bool {
        self.certification.pass && self.checks.pass()
    }
}

/// Settings of the smoothing pipeline; defaults give the documented demo.
#[derive(Debug, Clone)]
pub struct SmoothDemoSettings {
    pub problem: ProblemSpec,
    pub family: ScheduleFamily,
    pub epsilon: f64,
    pub kind: DecayKind,
    /// Overrides the rate-preserving schedule with a constant `mu`.
    pub constant_mu: Option<f64>,
    pub config: IntegratorConfig,
    pub x0: Vector,
    pub v0: Vector,
    pub cert_samples: usize,
    pub seed: u64,
}

impl Default for SmoothDemoSettings {
    fn default() -> Self {
        let problem = problems::l1_denoise(vector(&[2.0, 0.1]), 1.0).expect("valid problem");
        let n = problem.dim();
        Self {
            problem,
            family: ScheduleFamily::hyperbolic(0.0).expect("valid"),
            epsilon: 0.5,
            kind: DecayKind::Exponential,
            constant_mu: None,
            config: IntegratorConfig::new(CANONICAL_HYPERBOLIC_T0, 10.0, 1e-3)
                .expect("valid")
                .with_record_stride(10),
            x0: Vector::zeros(n),
            v0: Vector::zeros(n),
            cert_samples: 10_000,
            seed: 0,
        }
    }
}

pub fn run_smooth_demo(s: &SmoothDemoSettings) -> Result<SmoothDemo> {
    let l1 = s
        .problem
        .as_l1()
        .ok_or_else(|| Error::Config(format!("smooth-demo needs an l1_denoise problem, got {}", s.problem.identifier)))?;
    let schedule = match s.constant_mu {
        Some(mu) => SmoothingSchedule::constant(mu),
        None => rate_preserving_mu(&s.family, s.epsilon, s.kind)?,
    };
    let mu_hi = schedule.mu(s.config.t0);
    let mu_lo = schedule.mu(s.config.t_end);
    let approx: Arc<dyn SmoothApproximation> = Arc::new(huber_l1_denoise(l1.clone(), mu_hi)?);
    let spread = l1.data().amax() + 1.0;
    let region = SamplingRegion::Box {
        lo: -spread,
        hi: spread,
    };
    let samples = random_samples(s.problem.dim(), s.cert_samples, &region, (mu_lo, mu_hi), s.seed)?;
    let certification = certify_smooth_approx(approx.as_ref(), &samples);
    let trajectory = smoothed_flow(
        s.problem.generator.as_ref(),
        approx,
        &s.family,
        &schedule,
        &s.config,
        &s.x0,
        &s.v0,
    )?;
    let checks = RunChecks::evaluate(&trajectory, DEFAULT_TOL_MONO, DEFAULT_TOL_BOUND, DEFAULT_TOL_INT);
    let budget = trajectory.last().diag.budget.unwrap_or(0.0);
    Ok(SmoothDemo {
        trajectory,
        certification,
        checks,
        budget,
    })
}

fn smooth_demo(args: &CommonArgs, cfg: &LoadedConfig) -> CmdResult<bool> {
    let mut settings = SmoothDemoSettings {
        seed: args.seed.unwrap_or(cfg.config.seed),
        ..Default::default()
    };
    if cfg.config.problem.is_some() {
        settings.problem = cfg.problem()?;
        let n = settings.problem.dim();
        settings.x0 = Vector::zeros(n);
        settings.v0 = Vector::zeros(n);
    }
    if cfg.config.schedule.is_some() {
        settings.family = cfg.family()?;
    }
    if let Some(sm) = &cfg.config.smoothing {
        if let Some(a) = sm.approximation.as_deref() {
            if a != "huber_l1" {
                return Err(Failure::Config(cfg.error("smoothing", "approximation", format!("unknown approximation `{a}`"))));
            }
        }
        settings.epsilon = cfg.positive("smoothing", "epsilon", sm.epsilon, settings.epsilon)?;
        settings.kind = sm.kind.unwrap_or(settings.kind);
        match sm.mu.as_deref() {
            None | Some("rate_preserving") => {}
            Some("constant") => {
                settings.constant_mu = Some(cfg.positive("smoothing", "mu_value", sm.mu_value, f64::NAN)?);
            }
            Some(other) => {
                return Err(Failure::Config(cfg.error("smoothing", "mu", format!("unknown mu schedule `{other}`"))))
            }
        }
        settings.cert_samples = sm.samples.unwrap_or(settings.cert_samples);
    }
    let b = &cfg.config.integrator;
    if b.t0.is_some() || b.t_end.is_some() || b.step.is_some() || b.record_stride.is_some() {
        let d = &settings.config;
        let c = IntegratorConfig {
            t0: b.t0.unwrap_or(d.t0),
            t_end: b.t_end.unwrap_or(d.t_end),
            step: b.step.unwrap_or(d.step),
            record_stride: b.record_stride.unwrap_or(d.record_stride),
            method: d.method,
        };
        c.validate()
            .map_err(|e| Failure::Config(cfg.error("integrator", "t_end", e.to_string())))?;
        settings.config = c;
    }
    if b.x0.is_some() || b.v0.is_some() {
        let (x0, v0) = cfg.initial_point(&settings.problem)?;
        settings.x0 = x0;
        settings.v0 = v0;
    }
    let session = Session::new(args, cfg, "out")?;
    if let Some(w) = stiffness_warning(&settings.config, &settings.family) {
        session.warn(w);
    }
    let demo = run_smooth_demo(&settings)?;
    let (csv, json_out) = cfg.formats()?;
    session.write_trajectory(&demo.trajectory, csv, json_out)?;
    let pass = demo.pass();
    session.write_json(
        "summary.json",
        &json!({
            "command": "smooth-demo",
            "problem": settings.problem.identifier,
            "schedule": demo.trajectory.schedule,
            "epsilon": settings.epsilon,
            "kind": settings.kind,
            "seed": settings.seed,
            "certification": demo.certification,
            "checks": demo.checks,
            "v0": demo.trajectory.v0(),
            "budget": demo.budget,
            "final_gap": demo.trajectory.last().diag.f_gap,
            "pass": pass,
        }),
    )?;
    session.say(format!(
        "smoothed flow on {}: certification {}, monotonicity {}, bounds {}, B(t_end) = {:.6} -> {}",
        settings.problem.identifier,
        verdict(demo.certification.pass),
        verdict(demo.checks.monotonicity.pass),
        verdict(demo.checks.bounds.pass),
        demo.budget,
        verdict(pass)
    ));
    Ok(pass)
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let (args, requires_config) = match &cli.command {
        Command::Simulate(a) | Command::CheckAssumptions(a) => (a, true),
        Command::ReproduceTable(a) | Command::SmoothDemo(a) => (a, false),
    };
    let cfg = match &args.config {
        Some(path) => match LoadedConfig::load(path) {
            Ok(c) => c,
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_CONFIG;
            }
        },
        None if requires_config => {
            eprintln!("error: --config PATH is required for this command");
            return EXIT_CONFIG;
        }
        None => LoadedConfig::default(),
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, &cfg),
        Command::CheckAssumptions(a) => check_assumptions(a, &cfg),
        Command::ReproduceTable(a) => cmd_reproduce_table(a, &cfg),
        Command::SmoothDemo(a) => smooth_demo(a, &cfg),
    };
    match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            EXIT_NUMERICAL
        }
    }
}
