//! State equations of the flow and their fixed-step integration.
//!
//! With `z = x + e^{-alpha} x'` the flow is the first-order pair
//!
//! ```text
//! x' = e^alpha (z - x)
//! z' = [Hess h(z)]^{-1} ( -kappa [grad h(z) - grad h(x)] - e^{alpha - eta} grad f(x) )
//! ```
//!
//! where `kappa = delta' + eta' - alpha' - e^alpha`. For `h = 1/2 ||.||^2` and
//! `eta = 2 alpha` this is `x'' + delta' x' + grad f(x) = 0`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::bregman::{DistanceGenerator, Objective};
use crate::lyapunov::{DiagnosticContext, DiagnosticsRecord, LyapunovVariant, VariantKind};
use crate::problems::ProblemSpec;
use crate::schedules::{ScheduleFamily, ScheduleSample};
use crate::{Error, Result, Vector};

pub const DEFAULT_STEP: f64 = 1e-3;

/// Largest `step * e^{alpha(t0)}` considered stable for RK4 on these flows.
pub const STIFFNESS_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x: Vector,
    pub z: Vector,
}

impl FlowState {
    /// `x' = e^alpha (z - x)`.
    pub fn velocity(&self, s: &ScheduleSample) -> Vector {
        (&self.z - &self.x) * s.exp_alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub t0: f64,
    pub t_end: f64,
    pub step: f64,
    pub record_stride: usize,
    pub method: Method,
}

impl IntegratorConfig {
    pub fn new(t0: f64, t_end: f64, step: f64) -> Result<Self> {
        let c = Self {
            t0,
            t_end,
            step,
            record_stride: 1,
            method: Method::Rk4,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t0 < self.t_end) {
            return Err(Error::Config(format!("need t0 < t_end, got [{}, {}]", self.t0, self.t_end)));
        }
        if !(self.step > 0.0 && self.step <= self.t_end - self.t0) {
            return Err(Error::Config(format!(
                "step must lie in (0, t_end - t0], got {}",
                self.step
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps; the step is shrunk slightly so the last one lands on `t_end`.
    pub fn num_steps(&self) -> usize {
        ((self.t_end - self.t0) / self.step - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_step(&self) -> f64 {
        (self.t_end - self.t0) / self.num_steps() as f64
    }

    /// `step * e^{alpha(t0)}`; values above [`STIFFNESS_LIMIT`] risk instability.
    pub fn stiffness(&self, family: &ScheduleFamily) -> Result<f64> {
        Ok(self.step * family.sample(self.t0)?.exp_alpha)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub state: FlowState,
    pub diag: DiagnosticsRecord,
    /// Second-order residual reconstructed from neighbouring steps; absent at the endpoints.
    pub ode_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub problem: String,
    pub schedule: String,
    pub variant: VariantKind,
    pub sigma: f64,
    pub config: IntegratorConfig,
}

impl Trajectory {
    /// `V(t0)`.
    pub fn v0(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.diag.v)
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.config.t0, self.config.t_end)
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.state.x.len())
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least one sample")
    }

    pub fn max_ode_residual(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.ode_residual).reduce(f64::max)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.dim();
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("x{i}")));
        cols.extend((1..=n).map(|i| format!("z{i}")));
        for c in ["V", "f_gap", "breg_xstar_z", "breg_xstar_x", "breg_z_x"] {
            cols.push(c.into());
        }
        cols.extend((1..=4).map(|i| format!("slack{i}")));
        cols
    }

    /// Writes one row per sample with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.csv_header()).map_err(io)?;
        for s in &self.samples {
            let d = &s.diag;
            let mut row = vec![d.t];
            row.extend(s.state.x.iter());
            row.extend(s.state.z.iter());
            row.extend([d.v, d.f_gap, d.breg_xstar_z, d.breg_xstar_x, d.breg_z_x]);
            row.extend(d.slacks);
            w.write_record(row.iter().map(|v| format_number(*v))).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let samples: Vec<_> = self
            .samples
            .iter()
            .map(|s| {
                json!({
                    "x": s.state.x.as_slice(),
                    "z": s.state.z.as_slice(),
                    "diagnostics": s.diag,
                    "ode_residual": s.ode_residual,
                })
            })
            .collect();
        json!({
            "problem": self.problem,
            "schedule": self.schedule,
            "variant": self.variant,
            "sigma": self.sigma,
            "config": self.config,
            "samples": samples,
        })
    }
}

/// `{:.16e}`: 17 significant digits, round-trip exact.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// `z = x0 + e^{-alpha(t0)} v0`.
pub fn initial_state(x0: &Vector, v0: &Vector, family: &ScheduleFamily, t0: f64) -> Result<FlowState> {
    if x0.len() != v0.len() {
        return Err(Error::Config(format!(
            "x0 has dimension {} but v0 has dimension {}",
            x0.len(),
            v0.len()
        )));
    }
    let s = family.sample(t0)?;
    Ok(FlowState {
        t: t0,
        x: x0.clone(),
        z: x0 + v0 / s.exp_alpha,
    })
}

fn state_rhs(
    h: &dyn DistanceGenerator,
    grad: &Vector,
    s: &ScheduleSample,
    x: &Vector,
    z: &Vector,
) -> Result<(Vector, Vector)> {
    for p in [x, z] {
        if !h.in_domain(p) {
            return Err(Error::Domain {
                point: p.as_slice().to_vec(),
            });
        }
    }
    let xdot = (z - x) * s.exp_alpha;
    let rhs = (h.gradient(z) - h.gradient(x)) * (-s.kappa()) - grad * s.gradient_gain();
    let zdot = h.hessian_solve(z, &rhs)?;
    Ok((xdot, zdot))
}

/// Right-hand side of the general state equation.
pub fn rhs_general(
    h: &dyn DistanceGenerator,
    f: &dyn Objective,
    s: &ScheduleSample,
    state: &FlowState,
) -> Result<(Vector, Vector)> {
    state_rhs(h, &f.gradient(&state.x), s, &state.x, &state.z)
}

/// Right-hand side for `h = 1/2 ||.||^2`, `eta = 2 alpha`:
/// `z' = -(delta' + alpha' - e^alpha)(z - x) - e^{-alpha} grad f(x)`.
pub fn rhs_l2(f: &dyn Objective, s: &ScheduleSample, state: &FlowState) -> Result<(Vector, Vector)> {
    if !s.has_standard_scaling() {
        return Err(Error::Precondition(format!(
            "the Euclidean state equation needs eta = 2 alpha; at t = {} eta - 2 alpha = {:e}",
            s.t,
            s.eta - 2.0 * s.alpha
        )));
    }
    let dz = &state.z - &state.x;
    let xdot = &dz * s.exp_alpha;
    let zdot = dz * (-(s.delta_dot + s.alpha_dot - s.exp_alpha)) - f.gradient(&state.x) / s.exp_alpha;
    Ok((xdot, zdot))
}

/// `e^{2 alpha} D_h(x + e^{-alpha} v, x)`, which is `1/2 ||v||^2` for the Euclidean generator.
pub fn kinetic_term(h: &dyn DistanceGenerator, s: &ScheduleSample, state: &FlowState) -> f64 {
    s.exp_alpha * s.exp_alpha * h.divergence(&state.z, &state.x)
}

/// Optional settings for [`integrate_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Uniform-convexity constant of `f` relative to `h` used in the recorded slacks.
    /// Defaults to `f.sigma()` for the Euclidean generator and 0 otherwise.
    pub sigma: Option<f64>,
    /// Defaults to the symmetric variant when the family uses `e^pi > 0`, else the standard one.
    pub variant: Option<LyapunovVariant>,
}

/// Picks the Lyapunov variant a family needs.
pub fn default_variant(h: &dyn DistanceGenerator, family: &ScheduleFamily) -> Result<LyapunovVariant> {
    if family.uses_symmetric_term() {
        if !h.is_symmetric() {
            return Err(Error::Precondition(format!(
                "{} uses e^pi > 0, which needs a symmetric divergence; `{}` is not symmetric",
                family.label(),
                h.name()
            )));
        }
        Ok(LyapunovVariant::Symmetric)
    } else {
        Ok(LyapunovVariant::Standard)
    }
}

/// Integrates the flow from `(x0, v0)` with default options.
pub fn integrate(
    h: &dyn DistanceGenerator,
    f: &dyn Objective,
    family: &ScheduleFamily,
    config: &IntegratorConfig,
    x0: &Vector,
    v0: &Vector,
) -> Result<Trajectory> {
    integrate_with(h, f, family, config, x0, v0, &RunOptions::default())
}

/// Integrates a built-in problem using its declared `sigma`.
pub fn integrate_problem(
    problem: &ProblemSpec,
    family: &ScheduleFamily,
    config: &IntegratorConfig,
    x0: &Vector,
    v0: &Vector,
) -> Result<Trajectory> {
    let opts = RunOptions {
        sigma: Some(problem.sigma),
        variant: None,
    };
    let mut traj = integrate_with(
        problem.generator.as_ref(),
        problem.objective.as_ref(),
        family,
        config,
        x0,
        v0,
        &opts,
    )?;
    traj.problem = problem.identifier.clone();
    Ok(traj)
}

pub fn integrate_with(
    h: &dyn DistanceGenerator,
    f: &dyn Objective,
    family: &ScheduleFamily,
    config: &IntegratorConfig,
    x0: &Vector,
    v0: &Vector,
    options: &RunOptions,
) -> Result<Trajectory> {
    let xstar = f.minimizer().ok_or(Error::MissingMinimizer)?;
    let variant = match &options.variant {
        Some(v) => {
            if matches!(v, LyapunovVariant::Symmetric) && !h.is_symmetric() {
                return Err(Error::Precondition(format!("`{}` is not symmetric", h.name())));
            }
            v.clone()
        }
        None => default_variant(h, family)?,
    };
    let sigma = options
        .sigma
        .unwrap_or(if h.is_euclidean() { f.sigma() } else { 0.0 });
    let grad = |x: &Vector, _t: f64| f.gradient(x);
    let engine = Engine {
        h,
        family,
        gradient: &grad,
        variant: &variant,
        objective: f,
        xstar,
        sigma,
        budget: None,
    };
    engine.run(config, x0, v0, f.name())
}

/// Closed-form `B(t)`; `None` means trapezoid accumulation.
pub(crate) type BudgetFn<'a> = Option<&'a (dyn Fn(f64) -> f64 + 'a)>;

pub(crate) struct Engine<'a> {
    pub h: &'a dyn DistanceGenerator,
    pub family: &'a ScheduleFamily,
    pub gradient: &'a (dyn Fn(&Vector, f64) -> Vector + 'a),
    pub variant: &'a LyapunovVariant,
    pub objective: &'a dyn Objective,
    pub xstar: &'a Vector,
    pub sigma: f64,
    pub budget: BudgetFn<'a>,
}

impl Engine<'_> {
    fn rhs(&self, t: f64, x: &Vector, z: &Vector) -> Result<(Vector, Vector)> {
        let s = self.family.sample(t)?;
        state_rhs(self.h, &(self.gradient)(x, t), &s, x, z)
    }

    fn rk4(&self, st: &FlowState, h: f64) -> Result<FlowState> {
        let t = st.t;
        let (k1x, k1z) = self.rhs(t, &st.x, &st.z)?;
        let (k2x, k2z) = self.rhs(t + 0.5 * h, &(&st.x + &k1x * (0.5 * h)), &(&st.z + &k1z * (0.5 * h)))?;
        let (k3x, k3z) = self.rhs(t + 0.5 * h, &(&st.x + &k2x * (0.5 * h)), &(&st.z + &k2z * (0.5 * h)))?;
        let (k4x, k4z) = self.rhs(t + h, &(&st.x + &k3x * h), &(&st.z + &k3z * h))?;
        let x = &st.x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        let z = &st.z + (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (h / 6.0);
        Ok(FlowState { t: t + h, x, z })
    }

    /// `||x'' + (e^alpha - alpha') x' + [Hess h(z)]^{-1} (e^alpha kappa [grad h(z) - grad h(x)] + e^{2 alpha - eta} grad f)||`
    /// with `x''` from second differences.
    fn ode_residual(&self, prev: &Vector, cur: &FlowState, next: &Vector, h: f64) -> Result<f64> {
        let s = self.family.sample(cur.t)?;
        let xddot = (next - &cur.x * 2.0 + prev) / (h * h);
        let xdot = cur.velocity(&s);
        let inner = (self.h.gradient(&cur.z) - self.h.gradient(&cur.x)) * (s.exp_alpha * s.kappa())
            + (self.gradient)(&cur.x, cur.t) * (2.0 * s.alpha - s.eta).exp();
        let r = xddot + xdot * (s.exp_alpha - s.alpha_dot) + self.h.hessian_solve(&cur.z, &inner)?;
        Ok(r.norm())
    }

    pub fn run(&self, config: &IntegratorConfig, x0: &Vector, v0: &Vector, problem: &str) -> Result<Trajectory> {
        config.validate()?;
        let dim = self.objective.dim();
        if x0.len() != dim || self.xstar.len() != dim || self.h.dim() != dim {
            return Err(Error::Config(format!(
                "dimension mismatch: x0 has {}, objective has {dim}, generator has {}",
                x0.len(),
                self.h.dim()
            )));
        }
        let mut state = initial_state(x0, v0, self.family, config.t0)?;
        if !self.h.in_domain(&state.x) || !self.h.in_domain(&state.z) {
            return Err(Error::Domain {
                point: state.z.as_slice().to_vec(),
            });
        }
        let s0 = self.family.sample(config.t0)?;
        let ctx = DiagnosticContext {
            variant: self.variant,
            h: self.h,
            f: self.objective,
            xstar: self.xstar,
            sigma: self.sigma,
            kinetic: self.h.is_euclidean() && s0.has_standard_scaling(),
        };
        let n = config.num_steps();
        let step = config.effective_step();
        let mut pw = ctx.evaluate(&s0, &state)?;
        let mut integrals = [0.0; 3];
        let mut kinetic = pw.kinetic_integrand.map(|_| 0.0);
        let mut budget = pw.budget_rate.map(|_| 0.0);
        let mut samples = vec![Sample {
            state: state.clone(),
            diag: pw.record.clone(),
            ode_residual: None,
        }];
        let mut prev_x: Option<Vector> = None;
        let mut last_recorded = Some(0usize);
        for k in 1..=n {
            let t_next = if k == n { config.t_end } else { config.t0 + k as f64 * step };
            let h = t_next - state.t;
            let next = match self.rk4(&state, h) {
                Ok(next) => next,
                Err(Error::Domain { .. }) => {
                    return Err(Error::Integration {
                        t: state.t,
                        last_x: state.x.as_slice().to_vec(),
                        last_z: state.z.as_slice().to_vec(),
                    })
                }
                Err(e) => return Err(e),
            };
            if next.x.iter().chain(next.z.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t: next.t });
            }
            if !self.h.in_domain(&next.x) || !self.h.in_domain(&next.z) {
                return Err(Error::Integration {
                    t: state.t,
                    last_x: state.x.as_slice().to_vec(),
                    last_z: state.z.as_slice().to_vec(),
                });
            }
            if let (Some(idx), Some(px)) = (last_recorded, prev_x.as_ref()) {
                samples[idx].ode_residual = Some(self.ode_residual(px, &state, &next.x, h)?);
            }
            last_recorded = None;
            let s = self.family.sample(next.t)?;
            let new_pw = ctx.evaluate(&s, &next)?;
            for (acc, (a, b)) in integrals.iter_mut().zip(pw.integrands.iter().zip(new_pw.integrands.iter())) {
                *acc += 0.5 * h * (a + b);
            }
            if let (Some(acc), Some(a), Some(b)) = (kinetic.as_mut(), pw.kinetic_integrand, new_pw.kinetic_integrand) {
                *acc += 0.5 * h * (a + b);
            }
            if let Some(acc) = budget.as_mut() {
                *acc = match self.budget {
                    Some(closed) => closed(next.t),
                    None => *acc + 0.5 * h * (pw.budget_rate.unwrap_or(0.0) + new_pw.budget_rate.unwrap_or(0.0)),
                };
            }
            prev_x = Some(std::mem::replace(&mut state, next).x);
            pw = new_pw;
            if k % config.record_stride == 0 || k == n {
                let mut diag = pw.record.clone();
                diag.integrals = integrals;
                diag.kinetic_integral = kinetic;
                diag.budget = budget;
                samples.push(Sample {
                    state: state.clone(),
                    diag,
                    ode_residual: None,
                });
                last_recorded = Some(samples.len() - 1);
            }
        }
        Ok(Trajectory {
            samples,
            problem: problem.to_string(),
            schedule: self.family.label(),
            variant: self.variant.kind(),
            sigma: self.sigma,
            config: config.clone(),
        })
    }
}
