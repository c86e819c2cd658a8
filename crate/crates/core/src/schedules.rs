//! Time-varying parameter families and the inequality systems they must satisfy.
//!
//! A schedule supplies `alpha, delta', eta, nu, e^pi` and their derivatives.
//! Only `delta'` is carried: constant shifts of `delta` do not change the
//! flow. `pi` is stored as `e^pi` so that `e^pi = 0` (no symmetric term) is
//! an ordinary value.
//!
//! Shipped families:
//!
//! | family | `e^alpha` | `delta'` | `nu'` | `e^pi` |
//! |---|---|---|---|---|
//! | constant `D` | `D/2` or `(D - sqrt(D^2 - 4 sigma))/2` | `D` | `e^alpha` | 0 |
//! | hyperbolic | `sqrt(sigma)/tanh(sqrt(sigma) t/2)` (`2/t` at `sigma = 0`) | see [`ScheduleFamily::Hyperbolic`] | `e^alpha` | 0 |
//! | `C/t` | `2C/(3t)` | `C/t` | `2C/(3t)` or `2/t` | `abs(3 - C)/(2C)` |

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::{Error, Result};

/// Earliest admissible time for families whose coefficients blow up at `t = 0`.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Absolute slack tolerance for condition checks.
pub const DEFAULT_CONDITION_TOL: f64 = 1e-9;

/// All schedule parameters at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleSample {
    pub t: f64,
    pub alpha: f64,
    /// `e^alpha`, kept alongside `alpha` so closed forms are not round-tripped through `exp(ln(.))`.
    pub exp_alpha: f64,
    pub alpha_dot: f64,
    pub delta_dot: f64,
    pub eta: f64,
    pub eta_dot: f64,
    pub nu: f64,
    pub nu_dot: f64,
    pub exp_pi: f64,
    pub exp_pi_dot: f64,
}

impl ScheduleSample {
    /// `delta' + eta' - alpha' - e^alpha`, the coefficient of `grad h(z) - grad h(x)` in the flow.
    pub fn kappa(&self) -> f64 {
        self.delta_dot + self.eta_dot - self.alpha_dot - self.exp_alpha
    }

    /// `e^{alpha - eta}`, the coefficient of `grad f(x)` in the `z` equation.
    pub fn gradient_gain(&self) -> f64 {
        (self.alpha - self.eta).exp()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.alpha,
            self.exp_alpha,
            self.alpha_dot,
            self.delta_dot,
            self.eta,
            self.eta_dot,
            self.nu,
            self.nu_dot,
            self.exp_pi,
            self.exp_pi_dot,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Whether `eta = 2 alpha` (and `eta' = 2 alpha'`) to a relative `1e-12`.
    pub fn has_standard_scaling(&self) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        close(self.eta, 2.0 * self.alpha) && close(self.eta_dot, 2.0 * self.alpha_dot)
    }
}

/// Closed time interval `[t_min, t_max]` on which a family is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub t_min: f64,
    pub t_max: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

pub type SampleFn = Arc<dyn Fn(f64) -> ScheduleSample + Send + Sync>;

/// A user-defined schedule. The sampler must fill every field consistently
/// (derivatives included) on `interval`.
#[derive(Clone)]
pub struct CustomSchedule {
    pub name: String,
    pub interval: Interval,
    /// Closed-form `nu''`, when known; enables rate-preserving smoothing.
    pub nu_ddot: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    sampler: SampleFn,
}

impl CustomSchedule {
    pub fn new(
        name: impl Into<String>,
        interval: Interval,
        sampler: impl Fn(f64) -> ScheduleSample + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            interval,
            nu_ddot: None,
            sampler: Arc::new(sampler),
        }
    }
}

impl fmt::Debug for CustomSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSchedule")
            .field("name", &self.name)
            .field("interval", &self.interval)
            .finish_non_exhaustive()
    }
}

/// Damping families.
#[derive(Debug, Clone)]
pub enum ScheduleFamily {
    /// `x'' + D x' + grad f = 0`, requires `sigma > 0`.
    ConstantDamping { d: f64, sigma: f64 },
    /// `delta' = sqrt(sigma) (3 + tanh^2(sqrt(sigma) t/2)) / (2 tanh(sqrt(sigma) t/2))`,
    /// and `delta' = 3/t` at `sigma = 0`.
    Hyperbolic { sigma: f64 },
    /// `x'' + (C/t) x' + grad f = 0` with `sigma = 0`.
    PolynomialDamping { c: f64 },
    Custom(CustomSchedule),
}

/// Rate predicted for `f(x(t)) - f*` by the family's `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PredictedRate {
    /// `O(exp(-rate * t))`.
    Exponential(f64),
    /// `O(t^{-exponent})`.
    Polynomial(f64),
}

impl PredictedRate {
    pub fn value(&self) -> f64 {
        match *self {
            PredictedRate::Exponential(r) | PredictedRate::Polynomial(r) => r,
        }
    }
}

/// Log of `sinh(u)` without overflow for large `u`.
fn ln_sinh(u: f64) -> f64 {
    if u > 20.0 {
        u + (-(-2.0 * u).exp_m1()).ln() - std::f64::consts::LN_2
    } else {
        u.sinh().ln()
    }
}

impl ScheduleFamily {
    pub fn constant_damping(d: f64, sigma: f64) -> Result<Self> {
        let f = ScheduleFamily::ConstantDamping { d, sigma };
        f.validate()?;
        Ok(f)
    }

    pub fn hyperbolic(sigma: f64) -> Result<Self> {
        let f = ScheduleFamily::Hyperbolic { sigma };
        f.validate()?;
        Ok(f)
    }

    pub fn polynomial(c: f64) -> Result<Self> {
        let f = ScheduleFamily::PolynomialDamping { c };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleFamily::ConstantDamping { d, sigma } => {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::Config(format!("constant damping needs D > 0, got {d}")));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!(
                        "constant damping needs strong convexity sigma > 0, got {sigma}"
                    )));
                }
            }
            ScheduleFamily::Hyperbolic { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("hyperbolic family needs sigma >= 0, got {sigma}")));
                }
            }
            ScheduleFamily::PolynomialDamping { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::Config(format!("C/t damping needs C > 0, got {c}")));
                }
            }
            ScheduleFamily::Custom(ref c) => {
                if !(c.interval.t_min < c.interval.t_max) {
                    return Err(Error::Config(format!("custom schedule `{}` has an empty interval", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            ScheduleFamily::ConstantDamping { d, sigma } => format!("constant_damping(D={d}, sigma={sigma})"),
            ScheduleFamily::Hyperbolic { sigma } => format!("hyperbolic(sigma={sigma})"),
            ScheduleFamily::PolynomialDamping { c } => format!("polynomial_damping(C={c})"),
            ScheduleFamily::Custom(c) => format!("custom({})", c.name),
        }
    }

    pub fn interval(&self) -> Interval {
        match self {
            ScheduleFamily::ConstantDamping { .. } => Interval {
                t_min: 0.0,
                t_max: f64::INFINITY,
            },
            ScheduleFamily::Hyperbolic { .. } | ScheduleFamily::PolynomialDamping { .. } => Interval {
                t_min: DEFAULT_T_MIN,
                t_max: f64::INFINITY,
            },
            ScheduleFamily::Custom(c) => c.interval,
        }
    }

    /// Starting time used when a run does not specify one.
    pub fn default_t0(&self) -> f64 {
        match self {
            ScheduleFamily::ConstantDamping { .. } => 0.0,
            ScheduleFamily::Hyperbolic { .. } => DEFAULT_T_MIN,
            ScheduleFamily::PolynomialDamping { .. } => 1.0,
            ScheduleFamily::Custom(c) => c.interval.t_min,
        }
    }

    /// Whether `e^pi > 0` is possible, which licenses the symmetric Lyapunov term.
    pub fn uses_symmetric_term(&self) -> bool {
        match *self {
            ScheduleFamily::PolynomialDamping { c } => c != 3.0,
            ScheduleFamily::Custom(ref c) => {
                let t = if c.interval.t_max.is_finite() {
                    0.5 * (c.interval.t_min + c.interval.t_max)
                } else {
                    c.interval.t_min + 1.0
                };
                [c.interval.t_min, t].iter().any(|&t| (c.sampler)(t).exp_pi > 0.0)
            }
            _ => false,
        }
    }

    pub fn sample(&self, t: f64) -> Result<ScheduleSample> {
        let iv = self.interval();
        if !t.is_finite() || !iv.contains(t) {
            return Err(Error::TimeDomain {
                t,
                t_min: iv.t_min,
                t_max: iv.t_max,
            });
        }
        Ok(self.closed_form(t))
    }

    fn closed_form(&self, t: f64) -> ScheduleSample {
        match *self {
            ScheduleFamily::ConstantDamping { d, sigma } => {
                let root = sigma.sqrt();
                let ea = if d <= 2.0 * root {
                    d / 2.0
                } else {
                    (d - (d * d - 4.0 * sigma).sqrt()) / 2.0
                };
                let alpha = ea.ln();
                ScheduleSample {
                    t,
                    alpha,
                    exp_alpha: ea,
                    alpha_dot: 0.0,
                    delta_dot: d,
                    eta: 2.0 * alpha,
                    eta_dot: 0.0,
                    nu: ea * t,
                    nu_dot: ea,
                    exp_pi: 0.0,
                    exp_pi_dot: 0.0,
                }
            }
            ScheduleFamily::Hyperbolic { sigma } if sigma > 0.0 => {
                let s = sigma.sqrt();
                let u = 0.5 * s * t;
                let th = u.tanh();
                let ea = s / th;
                let alpha = s.ln() - th.ln();
                let alpha_dot = -s / (s * t).sinh();
                ScheduleSample {
                    t,
                    alpha,
                    exp_alpha: ea,
                    alpha_dot,
                    delta_dot: s * (3.0 + th * th) / (2.0 * th),
                    eta: 2.0 * alpha,
                    eta_dot: 2.0 * alpha_dot,
                    nu: 2.0 * ln_sinh(u),
                    nu_dot: ea,
                    exp_pi: 0.0,
                    exp_pi_dot: 0.0,
                }
            }
            ScheduleFamily::Hyperbolic { .. } => {
                let alpha = (2.0 / t).ln();
                ScheduleSample {
                    t,
                    alpha,
                    exp_alpha: 2.0 / t,
                    alpha_dot: -1.0 / t,
                    delta_dot: 3.0 / t,
                    eta: 2.0 * alpha,
                    eta_dot: -2.0 / t,
                    nu: 2.0 * t.ln(),
                    nu_dot: 2.0 / t,
                    exp_pi: 0.0,
                    exp_pi_dot: 0.0,
                }
            }
            ScheduleFamily::PolynomialDamping { c } => {
                let lambda = 2.0 * c / 3.0;
                let alpha = (lambda / t).ln();
                let (nu, nu_dot) = if c <= 3.0 {
                    (lambda * t.ln(), lambda / t)
                } else {
                    (2.0 * t.ln(), 2.0 / t)
                };
                ScheduleSample {
                    t,
                    alpha,
                    exp_alpha: lambda / t,
                    alpha_dot: -1.0 / t,
                    delta_dot: c / t,
                    eta: 2.0 * alpha,
                    eta_dot: -2.0 / t,
                    nu,
                    nu_dot,
                    exp_pi: (3.0 - c).abs() / (2.0 * c),
                    exp_pi_dot: 0.0,
                }
            }
            ScheduleFamily::Custom(ref c) => (c.sampler)(t),
        }
    }

    /// Closed-form `nu''`, where available.
    pub fn nu_ddot(&self, t: f64) -> Option<f64> {
        match *self {
            ScheduleFamily::ConstantDamping { .. } => Some(0.0),
            ScheduleFamily::Hyperbolic { sigma } if sigma > 0.0 => {
                let s = sigma.sqrt();
                let sh = (0.5 * s * t).sinh();
                Some(-0.5 * sigma / (sh * sh))
            }
            ScheduleFamily::Hyperbolic { .. } => Some(-2.0 / (t * t)),
            ScheduleFamily::PolynomialDamping { c } => {
                let k = if c <= 3.0 { 2.0 * c / 3.0 } else { 2.0 };
                Some(-k / (t * t))
            }
            ScheduleFamily::Custom(ref c) => c.nu_ddot.as_ref().map(|f| f(t)),
        }
    }

    /// Convergence rate implied by `e^{-nu(t)}`, for the shipped families.
    pub fn predicted_rate(&self) -> Option<PredictedRate> {
        match *self {
            ScheduleFamily::ConstantDamping { .. } => Some(PredictedRate::Exponential(self.closed_form(0.0).exp_alpha)),
            ScheduleFamily::Hyperbolic { sigma } if sigma > 0.0 => Some(PredictedRate::Exponential(sigma.sqrt())),
            ScheduleFamily::Hyperbolic { .. } => Some(PredictedRate::Polynomial(2.0)),
            ScheduleFamily::PolynomialDamping { c } => {
                Some(PredictedRate::Polynomial(if c <= 3.0 { 2.0 * c / 3.0 } else { 2.0 }))
            }
            ScheduleFamily::Custom(_) => None,
        }
    }

    /// Multiplies `nu` and `nu'` by `factor`. Factors above 1 on a family
    /// with `nu' = e^alpha` deliberately break the first condition.
    pub fn with_rate_scale(self, factor: f64) -> ScheduleFamily {
        let interval = self.interval();
        let name = format!("{} with nu scaled by {factor}", self.label());
        let base = self.clone();
        let mut custom = CustomSchedule::new(name, interval, move |t| {
            let mut s = base.closed_form(t);
            s.nu *= factor;
            s.nu_dot *= factor;
            s
        });
        let base = self;
        if base.nu_ddot(interval.t_min.max(1e-3)).is_some() {
            custom.nu_ddot = Some(Arc::new(move |t| factor * base.nu_ddot(t).unwrap_or(f64::NAN)));
        }
        ScheduleFamily::Custom(custom)
    }

    /// Adds a constant to `nu`, which rescales the Lyapunov function by `e^shift`.
    pub fn with_nu_shift(self, shift: f64) -> ScheduleFamily {
        let interval = self.interval();
        let name = format!("{} with nu shifted by {shift}", self.label());
        let base = self.clone();
        let mut custom = CustomSchedule::new(name, interval, move |t| {
            let mut s = base.closed_form(t);
            s.nu += shift;
            s
        });
        let base = self;
        custom.nu_ddot = Some(Arc::new(move |t| base.nu_ddot(t).unwrap_or(f64::NAN)));
        ScheduleFamily::Custom(custom)
    }
}

/// Free-function form of [`ScheduleFamily::sample`].
pub fn sample(family: &ScheduleFamily, t: f64) -> Result<ScheduleSample> {
    family.sample(t)
}

/// Sorted, finite sample times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn linspace(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 || !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::Config(format!("invalid grid [{start}, {end}] with {n} points")));
        }
        let h = (end - start) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| start + h * i as f64).collect();
        points[n - 1] = end;
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid points must be finite and strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("grid is non-empty")
    }
}

/// Which inequality system a report evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionSystem {
    /// The base system, no symmetric term.
    General,
    /// The relaxed system licensed by a symmetric divergence.
    General2,
    /// The `h = 1/2 ||.||^2`, `eta = 2 alpha` specialization.
    Para,
}

/// Slack curves of a condition check. Item 1 is `nu' - e^alpha`; items 2-4
/// are the coefficients multiplying `D_h(x*, z)`, `D_h(x*, x)`, `D_h(z, x)`
/// in the bound on `V'`. Every item must be `<= tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub system: ConditionSystem,
    pub sigma: f64,
    pub tolerance: f64,
    pub times: Vec<f64>,
    pub slacks: Vec<[f64; 4]>,
    pub max_slack: [f64; 4],
    /// Item holds with equality (`|slack| <= tolerance`) on the whole grid.
    pub equality: [bool; 4],
    pub worst_time: f64,
    pub worst_item: usize,
    pub worst_slack: f64,
    pub pass: bool,
}

impl ConditionReport {
    fn from_rows(system: ConditionSystem, sigma: f64, times: Vec<f64>, slacks: Vec<[f64; 4]>) -> Self {
        let tolerance = DEFAULT_CONDITION_TOL;
        let mut max_slack = [f64::NEG_INFINITY; 4];
        let mut max_abs = [0.0_f64; 4];
        let (mut worst_time, mut worst_item, mut worst_slack) = (times[0], 1, f64::NEG_INFINITY);
        for (t, row) in times.iter().zip(&slacks) {
            for k in 0..4 {
                max_slack[k] = max_slack[k].max(row[k]);
                max_abs[k] = max_abs[k].max(row[k].abs());
                if row[k] > worst_slack || row[k].is_nan() {
                    worst_slack = row[k];
                    worst_time = *t;
                    worst_item = k + 1;
                }
            }
        }
        let pass = slacks.iter().flatten().all(|s| *s <= tolerance);
        ConditionReport {
            system,
            sigma,
            tolerance,
            times,
            slacks,
            max_slack,
            equality: max_abs.map(|m| m <= tolerance),
            worst_time,
            worst_item,
            worst_slack,
            pass,
        }
    }
}

/// Left-hand sides of the base system.
pub fn general_slacks(s: &ScheduleSample, sigma: f64) -> [f64; 4] {
    let k = s.kappa();
    [
        s.nu_dot - s.exp_alpha,
        -k + (s.nu_dot + s.eta_dot),
        k - sigma * s.gradient_gain(),
        -k,
    ]
}

/// Left-hand sides of the relaxed system with the `e^pi` term.
pub fn general2_slacks(s: &ScheduleSample, sigma: f64) -> [f64; 4] {
    let k = s.kappa();
    let pa = s.exp_pi * s.exp_alpha;
    [
        s.nu_dot - s.exp_alpha,
        -k + (s.nu_dot + s.eta_dot) + pa,
        k - sigma * s.gradient_gain() - pa + (s.nu_dot + s.eta_dot) * s.exp_pi + s.exp_pi_dot,
        -k - pa,
    ]
}

/// Left-hand sides of the `eta = 2 alpha` system, written directly in terms of
/// `delta' + alpha' - e^alpha`.
pub fn para_slacks(s: &ScheduleSample, sigma: f64) -> [f64; 4] {
    let damp = s.delta_dot + s.alpha_dot - s.exp_alpha;
    let ea = s.exp_alpha;
    let p = s.exp_pi;
    [
        s.nu_dot - ea,
        -damp + (s.nu_dot + 2.0 * s.alpha_dot) + p * ea,
        damp - sigma / ea + (s.nu_dot + 2.0 * s.alpha_dot - ea) * p + s.exp_pi_dot,
        -damp - p * ea,
    ]
}

fn sample_grid(family: &ScheduleFamily, grid: &TimeGrid) -> Result<Vec<ScheduleSample>> {
    grid.points()
        .iter()
        .map(|&t| {
            let s = family.sample(t)?;
            if !s.is_finite() {
                return Err(Error::Schedule(format!("{} is not finite at t = {t}", family.label())));
            }
            if s.exp_pi < 0.0 {
                return Err(Error::Schedule(format!("e^pi < 0 at t = {t}")));
            }
            Ok(s)
        })
        .collect()
}

/// Checks the base system on `grid`.
pub fn check_general(family: &ScheduleFamily, sigma: f64, grid: &TimeGrid) -> Result<ConditionReport> {
    let samples = sample_grid(family, grid)?;
    let rows = samples.iter().map(|s| general_slacks(s, sigma)).collect();
    Ok(ConditionReport::from_rows(ConditionSystem::General, sigma, grid.points().to_vec(), rows))
}

/// Checks the relaxed system; `e^pi > 0` anywhere requires `symmetric`.
pub fn check_general2(
    family: &ScheduleFamily,
    sigma: f64,
    symmetric: bool,
    grid: &TimeGrid,
) -> Result<ConditionReport> {
    let samples = sample_grid(family, grid)?;
    if !symmetric {
        if let Some(s) = samples.iter().find(|s| s.exp_pi > 0.0) {
            return Err(Error::Precondition(format!(
                "e^pi = {} > 0 at t = {} requires a symmetric Bregman divergence",
                s.exp_pi, s.t
            )));
        }
    }
    let rows = samples.iter().map(|s| general2_slacks(s, sigma)).collect();
    Ok(ConditionReport::from_rows(ConditionSystem::General2, sigma, grid.points().to_vec(), rows))
}

/// Checks the `h = 1/2 ||.||^2`, `eta = 2 alpha` system.
pub fn check_para(family: &ScheduleFamily, sigma: f64, grid: &TimeGrid) -> Result<ConditionReport> {
    let samples = sample_grid(family, grid)?;
    if let Some(s) = samples.iter().find(|s| !s.has_standard_scaling()) {
        return Err(Error::Precondition(format!(
            "eta = 2 alpha is violated at t = {}: eta - 2 alpha = {:e}, eta' - 2 alpha' = {:e}",
            s.t,
            s.eta - 2.0 * s.alpha,
            s.eta_dot - 2.0 * s.alpha_dot
        )));
    }
    let rows = samples.iter().map(|s| para_slacks(s, sigma)).collect();
    Ok(ConditionReport::from_rows(ConditionSystem::Para, sigma, grid.points().to_vec(), rows))
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Maps a schedule written with `(alpha, beta)` and `gamma' = e^alpha` onto this
/// crate's parameters: `nu = beta`, `e^eta = (1 + sigma e^beta) e^{-beta}`,
/// `delta' = alpha' + e^alpha + beta'`, `e^pi = 0`.
///
/// Requires `0 <= beta' <= e^alpha` on `grid`.
pub fn from_ki23(
    beta: ScalarFn,
    beta_dot: ScalarFn,
    alpha: ScalarFn,
    alpha_dot: ScalarFn,
    sigma: f64,
    grid: &TimeGrid,
) -> Result<ScheduleFamily> {
    if !(sigma >= 0.0) {
        return Err(Error::Mapping(format!("sigma must be nonnegative, got {sigma}")));
    }
    for &t in grid.points() {
        let bd = beta_dot(t);
        let ea = alpha(t).exp();
        let slack = 1e-12 * (1.0 + ea);
        if !(bd >= -slack && bd <= ea + slack) {
            return Err(Error::Mapping(format!(
                "0 <= beta' <= e^alpha fails at t = {t}: beta' = {bd}, e^alpha = {ea}"
            )));
        }
    }
    let interval = Interval {
        t_min: grid.start(),
        t_max: grid.end(),
    };
    Ok(ScheduleFamily::Custom(CustomSchedule::new(
        format!("mapped schedule (sigma={sigma})"),
        interval,
        move |t| {
            let a = alpha(t);
            let ea = a.exp();
            let b = beta(t);
            let bd = beta_dot(t);
            // -beta + ln(1 + sigma e^beta) = ln(e^{-beta} + sigma)
            let eta = ((-b).exp() + sigma).ln();
            let eta_dot = -bd / (1.0 + sigma * b.exp());
            ScheduleSample {
                t,
                alpha: a,
                exp_alpha: ea,
                alpha_dot: alpha_dot(t),
                delta_dot: alpha_dot(t) + ea + bd,
                eta,
                eta_dot,
                nu: b,
                nu_dot: bd,
                exp_pi: 0.0,
                exp_pi_dot: 0.0,
            }
        },
    )))
}

/// `2 alpha' e^alpha + e^{2 alpha} - sigma`, the defining equation of the hyperbolic `alpha`.
pub fn alpha_ode_residual(exp_alpha: f64, alpha_dot: f64, sigma: f64) -> f64 {
    2.0 * alpha_dot * exp_alpha + exp_alpha * exp_alpha - sigma
}

/// Largest `|2 alpha' e^alpha + e^{2 alpha} - sigma|` of the hyperbolic family on `grid`.
///
/// The decaying branch `e^alpha = sqrt(sigma) tanh(sqrt(sigma) t/2)` solves the
/// same equation but yields a slower `nu`; it is not shipped as a family.
pub fn verify_alpha_ode_residual(sigma: f64, grid: &TimeGrid) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition(format!("sigma must be positive, got {sigma}")));
    }
    if grid.start() <= 0.0 {
        return Err(Error::Precondition("grid must be strictly positive".into()));
    }
    let family = ScheduleFamily::Hyperbolic { sigma };
    let mut worst = 0.0_f64;
    for &t in grid.points() {
        let s = family.sample(t)?;
        worst = worst.max(alpha_ode_residual(s.exp_alpha, s.alpha_dot, sigma).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(a: f64, b: f64) -> TimeGrid {
        TimeGrid::linspace(a, b, 400).unwrap()
    }

    #[test]
    fn constant_damping_boundary_case() {
        let f = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        for t in [0.0, 1.0, 7.5] {
            let s = f.sample(t).unwrap();
            assert_eq!(s.exp_alpha, 1.0);
            assert_eq!(s.delta_dot, 2.0);
            assert_eq!(s.nu_dot, 1.0);
            assert_eq!(s.exp_pi, 0.0);
        }
    }

    #[test]
    fn polynomial_c3_sample() {
        let s = ScheduleFamily::polynomial(3.0).unwrap().sample(2.0).unwrap();
        assert_relative_eq!(s.exp_alpha, 1.0, epsilon = 1e-15);
        assert_eq!(s.delta_dot, 1.5);
        assert_relative_eq!(s.nu_dot, 1.0, epsilon = 1e-15);
        assert_eq!(s.exp_pi, 0.0);
    }

    #[test]
    fn hyperbolic_tends_to_critical_damping() {
        let s = ScheduleFamily::hyperbolic(1.0).unwrap().sample(50.0).unwrap();
        assert!((s.exp_alpha - 1.0).abs() <= 1e-10);
        assert!((s.delta_dot - 2.0).abs() <= 1e-10);
        let s = ScheduleFamily::hyperbolic(4.0).unwrap().sample(50.0).unwrap();
        assert!((s.delta_dot - 4.0).abs() <= 1e-10);
    }

    #[test]
    fn out_of_interval_times_are_rejected() {
        for f in [
            ScheduleFamily::hyperbolic(1.0).unwrap(),
            ScheduleFamily::hyperbolic(0.0).unwrap(),
            ScheduleFamily::polynomial(3.0).unwrap(),
        ] {
            assert!(matches!(f.sample(0.0), Err(Error::TimeDomain { .. })));
            assert!(f.sample(1e-3).is_ok());
        }
        assert!(ScheduleFamily::constant_damping(1.0, 1.0).unwrap().sample(-1.0).is_err());
        assert!(ScheduleFamily::constant_damping(1.0, 1.0).unwrap().sample(f64::NAN).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ScheduleFamily::constant_damping(2.0, 0.0).is_err());
        assert!(ScheduleFamily::constant_damping(0.0, 1.0).is_err());
        assert!(ScheduleFamily::hyperbolic(-1.0).is_err());
        assert!(ScheduleFamily::polynomial(0.0).is_err());
    }

    #[test]
    fn constant_damping_d2_general_equalities() {
        // Substituting e^alpha = 1, delta' = 2, eta' = alpha' = 0, nu' = 1:
        // items 2, 3 vanish and item 4 is -1.
        let f = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        let r = check_general(&f, 1.0, &grid(0.1, 10.0)).unwrap();
        assert!(r.pass);
        assert_eq!(r.equality, [true, true, true, false]);
        assert_relative_eq!(r.max_slack[3], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn hyperbolic_general_equalities() {
        let f = ScheduleFamily::hyperbolic(1.0).unwrap();
        let r = check_general(&f, 1.0, &grid(0.1, 10.0)).unwrap();
        assert!(r.pass, "{:?}", r.max_slack);
        assert!(r.equality[1] && r.equality[2]);
        assert!(!r.equality[3]);
    }

    #[test]
    fn doubled_rate_fails_everywhere() {
        let f = ScheduleFamily::constant_damping(2.0, 1.0).unwrap().with_rate_scale(2.0);
        let r = check_general(&f, 1.0, &grid(0.1, 10.0)).unwrap();
        assert!(!r.pass);
        for (row, t) in r.slacks.iter().zip(&r.times) {
            let ea = f.sample(*t).unwrap().exp_alpha;
            assert_relative_eq!(row[0], ea, max_relative = 1e-14);
        }
    }

    #[test]
    fn polynomial_c2_general2() {
        let f = ScheduleFamily::polynomial(2.0).unwrap();
        assert_relative_eq!(f.sample(1.0).unwrap().exp_pi, 0.25);
        let r = check_general2(&f, 0.0, true, &grid(1.0, 100.0)).unwrap();
        assert!(r.pass);
        // items 2 and 4 of the relaxed system are equalities, item 3 is (C/3 - 3/C)/t.
        assert!(r.equality[1] && r.equality[3]);
        for (row, t) in r.slacks.iter().zip(&r.times) {
            assert_relative_eq!(row[2], (2.0 / 3.0 - 1.5) / t, max_relative = 1e-12);
        }
        assert!(matches!(check_general2(&f, 0.0, false, &grid(1.0, 2.0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn polynomial_c4_general2() {
        let f = ScheduleFamily::polynomial(4.0).unwrap();
        let s = f.sample(3.0).unwrap();
        assert_relative_eq!(s.exp_pi, 0.125);
        assert_relative_eq!(s.nu_dot, 2.0 / 3.0);
        let r = check_general2(&f, 0.0, true, &grid(1.0, 100.0)).unwrap();
        assert!(r.pass);
        for (row, t) in r.slacks.iter().zip(&r.times) {
            assert_relative_eq!(row[3], -2.0 * (4.0 - 3.0) / (3.0 * t), max_relative = 1e-12);
        }
    }

    #[test]
    fn general2_reduces_to_general_without_pi() {
        for f in [
            ScheduleFamily::constant_damping(3.0, 1.0).unwrap(),
            ScheduleFamily::hyperbolic(1.0).unwrap(),
            ScheduleFamily::polynomial(3.0).unwrap(),
        ] {
            let g = grid(0.5, 10.0);
            let a = check_general(&f, 1.0, &g).unwrap();
            let b = check_general2(&f, 1.0, false, &g).unwrap();
            assert_eq!(a.slacks, b.slacks);
            assert_eq!(a.pass, b.pass);
        }
    }

    #[test]
    fn para_checks() {
        let f = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        let r = check_para(&f, 1.0, &grid(0.0, 10.0)).unwrap();
        assert!(r.pass);
        assert!(r.equality[1] && r.equality[2]);

        let f = ScheduleFamily::constant_damping(3.0, 1.0).unwrap();
        assert_relative_eq!(f.sample(0.0).unwrap().exp_alpha, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert!(check_para(&f, 1.0, &grid(0.0, 10.0)).unwrap().pass);

        let f = ScheduleFamily::hyperbolic(0.0).unwrap();
        let r = check_para(&f, 0.0, &grid(0.01, 10.0)).unwrap();
        assert!(r.pass);
        assert!(r.equality[3]);
    }

    #[test]
    fn para_agrees_with_general2_under_standard_scaling() {
        for (f, sigma) in [
            (ScheduleFamily::constant_damping(5.0, 1.0).unwrap(), 1.0),
            (ScheduleFamily::hyperbolic(2.0).unwrap(), 2.0),
            (ScheduleFamily::polynomial(1.5).unwrap(), 0.0),
            (ScheduleFamily::polynomial(6.0).unwrap(), 0.0),
        ] {
            for t in [0.3, 1.0, 4.0, 25.0] {
                let s = f.sample(t).unwrap();
                let a = general2_slacks(&s, sigma);
                let b = para_slacks(&s, sigma);
                for k in 0..4 {
                    assert!((a[k] - b[k]).abs() <= 1e-12 * (1.0 + a[k].abs()), "{} t={t} k={k}", f.label());
                }
            }
        }
    }

    #[test]
    fn para_rejects_nonstandard_eta() {
        let g = grid(0.5, 5.0);
        // sigma = 0 mapping gives eta = -2 ln t = 2 alpha - 2 ln 2
        let mapped = from_ki23(
            Arc::new(|t: f64| 2.0 * t.ln()),
            Arc::new(|t: f64| 2.0 / t),
            Arc::new(|t: f64| (2.0 / t).ln()),
            Arc::new(|t: f64| -1.0 / t),
            0.0,
            &g,
        )
        .unwrap();
        assert!(check_para(&ScheduleFamily::hyperbolic(0.0).unwrap(), 0.0, &g).is_ok());
        assert!(matches!(check_para(&mapped, 0.0, &g), Err(Error::Precondition(_))));
    }

    #[test]
    fn mapping_reproduces_hyperbolic_damping() {
        let g = TimeGrid::linspace(0.5, 10.0, 500).unwrap();
        let mapped = from_ki23(
            Arc::new(|t: f64| 2.0 * (t / 2.0).sinh().ln()),
            Arc::new(|t: f64| 1.0 / (t / 2.0).tanh()),
            Arc::new(|t: f64| (1.0 / (t / 2.0).tanh()).ln()),
            Arc::new(|t: f64| -1.0 / t.sinh()),
            1.0,
            &g,
        )
        .unwrap();
        let hyp = ScheduleFamily::hyperbolic(1.0).unwrap();
        for &t in g.points() {
            let a = mapped.sample(t).unwrap().delta_dot;
            let b = hyp.sample(t).unwrap().delta_dot;
            assert!((a - b).abs() <= 1e-10, "t={t}: {a} vs {b}");
        }
        let r = check_general(&mapped, 1.0, &g).unwrap();
        assert!(r.pass);
        assert!(r.slacks.iter().all(|row| row[1].abs() <= 1e-12));
        // beta' = e^alpha: item 3 = (beta' - e^alpha) sigma e^beta / (1 + sigma e^beta) = 0
        assert!(r.equality[2]);
    }

    #[test]
    fn mapping_at_sigma_zero() {
        let g = TimeGrid::linspace(0.5, 10.0, 200).unwrap();
        let mapped = from_ki23(
            Arc::new(|t: f64| 2.0 * t.ln()),
            Arc::new(|t: f64| 1.0 / t),
            Arc::new(|t: f64| (2.0 / t).ln()),
            Arc::new(|t: f64| -1.0 / t),
            0.0,
            &g,
        )
        .unwrap();
        for &t in g.points() {
            let s = mapped.sample(t).unwrap();
            assert_relative_eq!(s.eta, -2.0 * t.ln(), epsilon = 1e-13);
            assert_relative_eq!(s.delta_dot, -1.0 / t + 2.0 / t + 1.0 / t, max_relative = 1e-14);
        }
        let r = check_general(&mapped, 0.0, &g).unwrap();
        assert!(r.pass);
        assert!(r.equality[1]);
    }

    #[test]
    fn mapping_rejects_decreasing_beta() {
        let g = TimeGrid::linspace(1.0, 2.0, 10).unwrap();
        let res = from_ki23(
            Arc::new(|t: f64| -t),
            Arc::new(|_| -1.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            1.0,
            &g,
        );
        assert!(matches!(res, Err(Error::Mapping(_))));
    }

    #[test]
    fn alpha_ode_residuals() {
        for sigma in [1.0, 4.0] {
            let r = verify_alpha_ode_residual(sigma, &TimeGrid::linspace(0.1, 20.0, 1000).unwrap()).unwrap();
            assert!(r <= 1e-8, "sigma={sigma}: {r}");
        }
        // constant branch e^alpha = sqrt(sigma)
        let s = ScheduleFamily::constant_damping(4.0, 4.0).unwrap().sample(1.0).unwrap();
        assert_eq!(alpha_ode_residual(s.exp_alpha, s.alpha_dot, 4.0), 0.0);
        // decaying branch chi = sqrt(sigma) tanh(sqrt(sigma) t / 2), with alpha' = chi'/chi
        let sigma: f64 = 2.0;
        for t in [0.1, 1.0, 5.0] {
            let u = 0.5 * sigma.sqrt() * t;
            let chi = sigma.sqrt() * u.tanh();
            let chi_dot = 0.5 * sigma / (u.cosh() * u.cosh());
            assert!(alpha_ode_residual(chi, chi_dot / chi, sigma).abs() <= 1e-12);
        }
        assert!(verify_alpha_ode_residual(0.0, &grid(0.1, 1.0)).is_err());
    }

    fn central(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fams = [
            ScheduleFamily::constant_damping(1.0, 1.0).unwrap(),
            ScheduleFamily::constant_damping(4.0, 1.0).unwrap(),
            ScheduleFamily::hyperbolic(1.0).unwrap(),
            ScheduleFamily::hyperbolic(0.25).unwrap(),
            ScheduleFamily::hyperbolic(0.0).unwrap(),
            ScheduleFamily::polynomial(1.5).unwrap(),
            ScheduleFamily::polynomial(6.0).unwrap(),
        ];
        let h = 1e-6;
        for f in &fams {
            for t in [0.05, 0.5, 2.0, 9.0] {
                let s = f.sample(t).unwrap();
                let rel = |fd: f64, an: f64| (fd - an).abs() / (1e-3 + an.abs());
                let a = central(|u| f.sample(u).unwrap().alpha, t, h);
                let e = central(|u| f.sample(u).unwrap().eta, t, h);
                let n = central(|u| f.sample(u).unwrap().nu, t, h);
                assert!(rel(a, s.alpha_dot) <= 1e-5, "{} alpha t={t}", f.label());
                assert!(rel(e, s.eta_dot) <= 1e-5, "{} eta t={t}", f.label());
                assert!(rel(n, s.nu_dot) <= 1e-5, "{} nu t={t}", f.label());
                let nd = central(|u| f.sample(u).unwrap().nu_dot, t, h);
                assert!(rel(nd, f.nu_ddot(t).unwrap()) <= 1e-5, "{} nu'' t={t}", f.label());
                assert!(s.nu_dot <= s.exp_alpha + 1e-14);
            }
        }
    }

    #[test]
    fn polynomial_rate_exponents() {
        for c in [0.5, 1.5, 3.0, 4.0, 8.0] {
            let f = ScheduleFamily::polynomial(c).unwrap();
            let k = if c <= 3.0 { 2.0 * c / 3.0 } else { 2.0 };
            let t0 = 1.3;
            for t in [2.0, 10.0, 100.0] {
                let dnu = f.sample(t).unwrap().nu - f.sample(t0).unwrap().nu;
                assert!((dnu - k * (t / t0).ln()).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn hyperbolic_small_sigma_limit() {
        let small = ScheduleFamily::hyperbolic(1e-8).unwrap();
        let zero = ScheduleFamily::hyperbolic(0.0).unwrap();
        for t in [1.0, 3.0, 10.0] {
            let a = small.sample(t).unwrap();
            let b = zero.sample(t).unwrap();
            assert!((a.exp_alpha - b.exp_alpha).abs() <= 1e-3 * b.exp_alpha);
            assert!((a.delta_dot - b.delta_dot).abs() <= 1e-3 * b.delta_dot);
        }
    }

    #[test]
    fn d_at_critical_value_gives_sqrt_sigma() {
        let sigma: f64 = 2.25;
        let f = ScheduleFamily::constant_damping(2.0 * sigma.sqrt(), sigma).unwrap();
        let s = f.sample(0.0).unwrap();
        assert_relative_eq!(s.exp_alpha, sigma.sqrt(), epsilon = 1e-15);
        let para = para_slacks(&s, sigma);
        assert!(para[2].abs() <= 1e-15);
    }

    #[test]
    fn predicted_rates() {
        let r = ScheduleFamily::constant_damping(1.0, 1.0).unwrap().predicted_rate().unwrap();
        assert_eq!(r, PredictedRate::Exponential(0.5));
        let r = ScheduleFamily::constant_damping(4.0, 1.0).unwrap().predicted_rate().unwrap();
        assert_relative_eq!(r.value(), (4.0 - 12f64.sqrt()) / 2.0);
        assert_eq!(
            ScheduleFamily::polynomial(6.0).unwrap().predicted_rate(),
            Some(PredictedRate::Polynomial(2.0))
        );
        assert_eq!(
            ScheduleFamily::hyperbolic(0.0).unwrap().predicted_rate(),
            Some(PredictedRate::Polynomial(2.0))
        );
    }

    #[test]
    fn grids_validate() {
        assert!(TimeGrid::linspace(1.0, 1.0, 10).is_err());
        assert!(TimeGrid::linspace(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::from_points(vec![0.0, 0.0]).is_err());
        let g = TimeGrid::linspace(0.1, 20.0, 1000).unwrap();
        assert_eq!(g.points().len(), 1000);
        assert_eq!(g.end(), 20.0);
    }
}
