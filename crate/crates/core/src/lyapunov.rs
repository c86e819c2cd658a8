//! Lyapunov functions and the certificates derived from them.
//!
//! The standard function is `V = e^nu (e^eta D_h(x*, z) + f(x) - f*)`. Along a
//! flow whose schedule passes its condition check, `V' <= 0`, which yields
//!
//! - `f(x(t)) - f* <= e^{-nu(t)} V(t0)` and `e^eta D_h(x*, z) <= e^{-nu(t)} V(t0)`
//! - three integral estimates, one per Bregman term in the bound on `V'`
//! - for `h = 1/2 ||.||^2`, a weighted kinetic-energy integral
//!
//! The symmetric variant adds `e^{nu + eta + pi} D_h(x, x*)`; the smoothed
//! variant replaces `f` with a smooth approximation and tracks the budget
//! `B(t) = beta_s * integral of nu' e^nu mu`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::bregman::{DistanceGenerator, Objective};
use crate::dynamics::{FlowState, Trajectory};
use crate::schedules::{general2_slacks, general_slacks, ScheduleSample};
use crate::smoothing::{SmoothApproximation, SmoothingSchedule};
use crate::{Error, Result, Vector};

pub const DEFAULT_TOL_MONO: f64 = 1e-8;
pub const DEFAULT_TOL_BOUND: f64 = 1e-6;
pub const DEFAULT_TOL_INT: f64 = 1e-3;

/// Coefficients with `|c| <= COEFFICIENT_TOL` are treated as zero.
pub const COEFFICIENT_TOL: f64 = 1e-9;

/// Which Lyapunov function certifies a run.
#[derive(Clone)]
pub enum LyapunovVariant {
    Standard,
    /// Adds `e^{nu + eta + pi} D_h(x, x*)`; needs a symmetric divergence.
    Symmetric,
    Smoothed {
        approximation: Arc<dyn SmoothApproximation>,
        schedule: SmoothingSchedule,
    },
}

impl LyapunovVariant {
    pub fn kind(&self) -> VariantKind {
        match self {
            LyapunovVariant::Standard => VariantKind::Standard,
            LyapunovVariant::Symmetric => VariantKind::Symmetric,
            LyapunovVariant::Smoothed { .. } => VariantKind::Smoothed,
        }
    }
}

impl fmt::Debug for LyapunovVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LyapunovVariant::Standard => f.write_str("Standard"),
            LyapunovVariant::Symmetric => f.write_str("Symmetric"),
            LyapunovVariant::Smoothed { approximation, schedule } => f
                .debug_struct("Smoothed")
                .field("approximation", &approximation.name())
                .field("beta_s", &approximation.beta_s())
                .field("schedule", schedule)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Standard,
    Symmetric,
    Smoothed,
}

/// Everything recorded about a trajectory at one sample time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub v: f64,
    pub f_gap: f64,
    pub breg_xstar_z: f64,
    pub breg_xstar_x: f64,
    pub breg_z_x: f64,
    pub nu: f64,
    pub eta: f64,
    /// `nu' - e^alpha` followed by the coefficients of the three Bregman terms in the bound on `V'`.
    pub slacks: [f64; 4],
    /// Running integrals of `-e^{nu + eta} slack_k D_k`, `k = 2, 3, 4`.
    pub integrals: [f64; 3],
    /// `(delta' + alpha' - e^alpha) + e^{pi + alpha}`, present for `h = 1/2 ||.||^2` with `eta = 2 alpha`.
    pub kinetic_coefficient: Option<f64>,
    pub kinetic_integral: Option<f64>,
    /// Upper bound on `V'` assembled from the recorded terms.
    pub vdot_bound: f64,
    pub mu: Option<f64>,
    /// `B(t)` for smoothed runs.
    pub budget: Option<f64>,
}

impl DiagnosticsRecord {
    /// Weights `-slack_k` of the three integral estimates.
    pub fn coefficients(&self) -> [f64; 3] {
        [-self.slacks[1], -self.slacks[2], -self.slacks[3]]
    }
}

/// Instantaneous diagnostics plus the integrands the integrator accumulates.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub record: DiagnosticsRecord,
    pub integrands: [f64; 3],
    pub kinetic_integrand: Option<f64>,
    /// `beta_s nu' e^nu mu`.
    pub budget_rate: Option<f64>,
}

/// Evaluates diagnostics for one `(h, f, x*, variant)` combination.
pub struct DiagnosticContext<'a> {
    pub variant: &'a LyapunovVariant,
    pub h: &'a dyn DistanceGenerator,
    pub f: &'a dyn Objective,
    pub xstar: &'a Vector,
    pub sigma: f64,
    /// Report the kinetic integrand (`h` Euclidean and `eta = 2 alpha`).
    pub kinetic: bool,
}

fn suboptimality(f: &dyn Objective, x: &Vector, xstar: &Vector) -> f64 {
    f.suboptimality(x).unwrap_or_else(|| f.value(x) - f.value(xstar))
}

impl DiagnosticContext<'_> {
    pub fn evaluate(&self, s: &ScheduleSample, state: &FlowState) -> Result<Pointwise> {
        let (x, z, xs) = (&state.x, &state.z, self.xstar);
        let d_sz = self.h.divergence(xs, z);
        let d_sx = self.h.divergence(xs, x);
        let d_zx = self.h.divergence(z, x);
        let f_gap = suboptimality(self.f, x, xs);
        let slacks = match self.variant {
            LyapunovVariant::Standard => general_slacks(s, self.sigma),
            _ => general2_slacks(s, self.sigma),
        };
        let w = (s.nu + s.eta).exp();
        let en = s.nu.exp();
        let mut mu = None;
        let mut budget_rate = None;
        let (v, energy_gap) = match self.variant {
            LyapunovVariant::Standard => (w * d_sz + en * f_gap, f_gap),
            LyapunovVariant::Symmetric => {
                let d_xs = self.h.divergence(x, xs);
                (w * d_sz + en * f_gap + w * s.exp_pi * d_xs, f_gap)
            }
            LyapunovVariant::Smoothed { approximation, schedule } => {
                let m = schedule.mu(s.t);
                let beta = approximation.beta_s();
                let g = approximation.value(x, m) + beta * m - approximation.value(xs, m);
                mu = Some(m);
                budget_rate = Some(beta * s.nu_dot * en * m);
                (w * d_sz + en * g, g)
            }
        };
        let integrands = [-w * slacks[1] * d_sz, -w * slacks[2] * d_sx, -w * slacks[3] * d_zx];
        let vdot_bound = w * (slacks[1] * d_sz + slacks[2] * d_sx + slacks[3] * d_zx)
            + en * slacks[0] * energy_gap
            + budget_rate.unwrap_or(0.0);
        let (kinetic_coefficient, kinetic_integrand) = if self.kinetic {
            let c = s.delta_dot + s.alpha_dot - s.exp_alpha + s.exp_pi * s.exp_alpha;
            let xdot = (z - x) * s.exp_alpha;
            (Some(c), Some(en * c * 0.5 * xdot.norm_squared()))
        } else {
            (None, None)
        };
        if !v.is_finite() {
            return Err(Error::Divergence { t: s.t });
        }
        Ok(Pointwise {
            record: DiagnosticsRecord {
                t: s.t,
                v,
                f_gap,
                breg_xstar_z: d_sz,
                breg_xstar_x: d_sx,
                breg_z_x: d_zx,
                nu: s.nu,
                eta: s.eta,
                slacks,
                integrals: [0.0; 3],
                kinetic_coefficient,
                kinetic_integral: kinetic_coefficient.map(|_| 0.0),
                vdot_bound,
                mu,
                budget: mu.map(|_| 0.0),
            },
            integrands,
            kinetic_integrand,
            budget_rate,
        })
    }
}

/// Evaluates `V` for `variant` at one state.
pub fn lyapunov_value(
    variant: &LyapunovVariant,
    h: &dyn DistanceGenerator,
    f: &dyn Objective,
    s: &ScheduleSample,
    state: &FlowState,
    xstar: Option<&Vector>,
) -> Result<f64> {
    let xstar = xstar.ok_or_else(|| Error::Config("the Lyapunov function needs a minimizer x*".into()))?;
    let ctx = DiagnosticContext {
        variant,
        h,
        f,
        xstar,
        sigma: 0.0,
        kinetic: false,
    };
    Ok(ctx.evaluate(s, state)?.record.v)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub increments_checked: usize,
    /// Largest `V(t_{k+1}) - V(t_k)`, net of the smoothing budget when present.
    pub max_increment: f64,
    pub worst_time: f64,
    pub tolerance: f64,
    pub budget_adjusted: bool,
    pub pass: bool,
}

pub fn monotonicity_report(traj: &Trajectory) -> MonotonicityReport {
    monotonicity_report_with(traj, DEFAULT_TOL_MONO)
}

/// `tol_rel` is scaled by `max(1, V(t0))`.
pub fn monotonicity_report_with(traj: &Trajectory, tol_rel: f64) -> MonotonicityReport {
    let tolerance = tol_rel * traj.v0().max(1.0);
    let mut max_increment = f64::NEG_INFINITY;
    let mut worst_time = traj.samples.first().map_or(f64::NAN, |s| s.diag.t);
    let mut budget_adjusted = false;
    for w in traj.samples.windows(2) {
        let (a, b) = (&w[0].diag, &w[1].diag);
        let mut inc = b.v - a.v;
        if let (Some(ba), Some(bb)) = (a.budget, b.budget) {
            inc -= bb - ba;
            budget_adjusted = true;
        }
        if inc > max_increment || inc.is_nan() {
            max_increment = inc;
            worst_time = b.t;
        }
    }
    let checked = traj.samples.len().saturating_sub(1);
    if checked == 0 {
        max_increment = 0.0;
    }
    MonotonicityReport {
        increments_checked: checked,
        max_increment,
        worst_time,
        tolerance,
        budget_adjusted,
        pass: max_increment <= tolerance,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub samples: usize,
    /// Largest `f_gap / (e^{-nu} (V(t0) + B))` over the run.
    pub worst_gap_ratio: f64,
    /// Largest `e^eta D_h(x*, z) / (e^{-nu} (V(t0) + B))` over the run.
    pub worst_divergence_ratio: f64,
    pub worst_time: f64,
    pub tolerance: f64,
    pub budget_included: bool,
    /// The symmetric variant reuses the standard bound shapes.
    pub symmetric_extension: bool,
    pub pass: bool,
}

pub fn bound_check(traj: &Trajectory) -> BoundReport {
    bound_check_with(traj, DEFAULT_TOL_BOUND)
}

pub fn bound_check_with(traj: &Trajectory, tol_rel: f64) -> BoundReport {
    let v0 = traj.v0();
    let mut report = BoundReport {
        samples: traj.samples.len(),
        worst_gap_ratio: 0.0,
        worst_divergence_ratio: 0.0,
        worst_time: traj.samples.first().map_or(f64::NAN, |s| s.diag.t),
        tolerance: tol_rel,
        budget_included: traj.variant == VariantKind::Smoothed,
        symmetric_extension: traj.variant == VariantKind::Symmetric,
        pass: true,
    };
    let mut worst = 0.0_f64;
    for s in &traj.samples {
        let d = &s.diag;
        let bound = (-d.nu).exp() * (v0 + d.budget.unwrap_or(0.0));
        let div = d.eta.exp() * d.breg_xstar_z;
        let limit = bound * (1.0 + tol_rel);
        if d.f_gap > limit || div > limit || !(d.f_gap.is_finite() && div.is_finite()) {
            report.pass = false;
        }
        let ratio = |v: f64| {
            if bound > 0.0 {
                v / bound
            } else if v > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        let (rg, rd) = (ratio(d.f_gap), ratio(div));
        report.worst_gap_ratio = report.worst_gap_ratio.max(rg);
        report.worst_divergence_ratio = report.worst_divergence_ratio.max(rd);
        if rg.max(rd) > worst {
            worst = rg.max(rd);
            report.worst_time = d.t;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IntegralStatus {
    /// Coefficient is positive somewhere and never negative; the bound applies.
    Bounded,
    /// Coefficient vanishes identically; the estimate reads `0 <= V(t0)`.
    Degenerate,
    /// Coefficient is negative at `time`; the schedule violates its condition.
    Violation { time: f64, coefficient: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegralItem {
    pub name: &'static str,
    pub value: f64,
    pub coefficient_min: f64,
    pub coefficient_max: f64,
    pub status: IntegralStatus,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegralReport {
    pub items: Vec<IntegralItem>,
    pub kinetic: Option<IntegralItem>,
    /// `V(t0)`, plus `B(t_end)` for smoothed runs.
    pub bound: f64,
    pub tolerance: f64,
    pub symmetric_extension: bool,
    pub pass: bool,
}

pub fn integral_estimates(traj: &Trajectory) -> IntegralReport {
    integral_estimates_with(traj, DEFAULT_TOL_INT)
}

fn classify(
    name: &'static str,
    value: f64,
    coefficients: impl Iterator<Item = (f64, f64)>,
    bound: f64,
    tol_rel: f64,
) -> IntegralItem {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut violation = None;
    for (t, c) in coefficients {
        if c < lo {
            lo = c;
            if c < -COEFFICIENT_TOL {
                violation = Some((t, c));
            }
        }
        hi = hi.max(c);
    }
    let status = match violation {
        Some((time, coefficient)) => IntegralStatus::Violation { time, coefficient },
        None if hi <= COEFFICIENT_TOL => IntegralStatus::Degenerate,
        None => IntegralStatus::Bounded,
    };
    let pass = match status {
        IntegralStatus::Violation { .. } => false,
        _ => value <= bound * (1.0 + tol_rel) + COEFFICIENT_TOL * bound.abs().max(1e-300),
    };
    IntegralItem {
        name,
        value,
        coefficient_min: lo,
        coefficient_max: hi,
        status,
        pass,
    }
}

pub fn integral_estimates_with(traj: &Trajectory, tol_rel: f64) -> IntegralReport {
    let last = traj.samples.last().map(|s| &s.diag);
    let bound = traj.v0() + last.and_then(|d| d.budget).unwrap_or(0.0);
    let names = ["breg_xstar_z", "breg_xstar_x", "breg_z_x"];
    let items: Vec<IntegralItem> = (0..3)
        .map(|k| {
            classify(
                names[k],
                last.map_or(0.0, |d| d.integrals[k]),
                traj.samples.iter().map(move |s| (s.diag.t, s.diag.coefficients()[k])),
                bound,
                tol_rel,
            )
        })
        .collect();
    let kinetic = last.and_then(|d| d.kinetic_integral).map(|value| {
        classify(
            "kinetic",
            value,
            traj.samples
                .iter()
                .map(|s| (s.diag.t, s.diag.kinetic_coefficient.unwrap_or(f64::NAN))),
            bound,
            tol_rel,
        )
    });
    let pass = items.iter().chain(kinetic.iter()).all(|i| i.pass);
    IntegralReport {
        items,
        kinetic,
        bound,
        tolerance: tol_rel,
        symmetric_extension: traj.variant == VariantKind::Symmetric,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `log f_gap` against `t`.
    Exponential,
    /// `log f_gap` against `log t`.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// The second half of a trajectory's horizon.
    pub fn last_half(traj: &Trajectory) -> Self {
        let (a, b) = traj.horizon();
        Self::new(0.5 * (a + b), b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FittedRate {
    pub model: FitModel,
    pub window: TimeInterval,
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in `log f_gap`.
    pub residual: f64,
}

impl FittedRate {
    /// `-slope`: the fitted exponential rate or polynomial exponent.
    pub fn rate(&self) -> f64 {
        -self.slope
    }
}

/// Least-squares fit of `log f_gap` over `window`. Samples whose gap is not
/// a positive normal float are skipped.
pub fn fit_rate(traj: &Trajectory, model: FitModel, window: TimeInterval) -> Result<FittedRate> {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .map(|s| &s.diag)
        .filter(|d| d.t >= window.start && d.t <= window.end)
        .filter(|d| d.f_gap.is_finite() && d.f_gap >= f64::MIN_POSITIVE)
        .map(|d| {
            let u = match model {
                FitModel::Exponential => d.t,
                FitModel::Polynomial => d.t.ln(),
            };
            (u, d.f_gap.ln())
        })
        .collect();
    if pts.len() < 5 {
        return Err(Error::Fit(format!(
            "{} usable samples in [{}, {}], need at least 5",
            pts.len(),
            window.start,
            window.end
        )));
    }
    let n = pts.len() as f64;
    let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mu).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("window holds a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = mv - slope * mu;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(FittedRate {
        model,
        window,
        samples: pts.len(),
        slope,
        intercept,
        residual,
    })
}
