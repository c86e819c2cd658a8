//! Smooth approximations of nonsmooth objectives and the smoothed flow.
//!
//! An approximation `f~(x, mu)` with parameters `(alpha_s, beta_s)` satisfies
//!
//! ```text
//! f~(x, mu) <= f(x) <= f~(x, mu) + beta_s mu
//! -beta_s <= d/dmu f~(x, mu) <= 0
//! f~(., mu) has an (alpha_s / mu)-Lipschitz gradient
//! ```
//!
//! Running the flow on `grad_x f~(x, mu(t))` with nonincreasing `mu` keeps the
//! rate `e^{-nu}` up to the budget `B(t) = beta_s * integral of nu' e^nu mu`,
//! which stays bounded for the schedules built by [`rate_preserving_mu`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bregman::{DistanceGenerator, Objective, SamplingRegion};
use crate::dynamics::{default_variant, Engine, IntegratorConfig, Trajectory};
use crate::lyapunov::LyapunovVariant;
use crate::problems::L1Denoise;
use crate::schedules::ScheduleFamily;
use crate::{Error, Result, Vector};

pub trait SmoothApproximation: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector, mu: f64) -> f64;
    fn grad_x(&self, x: &Vector, mu: f64) -> Vector;
    fn grad_mu(&self, x: &Vector, mu: f64) -> f64;
    /// `f~(., mu)` is `(alpha_s / mu)`-smooth.
    fn alpha_s(&self) -> f64;
    fn beta_s(&self) -> f64;
    /// The nonsmooth objective being approximated.
    fn base(&self) -> &dyn Objective;
    /// Uniform-convexity constant of `f~(., mu)` relative to `1/2 ||.||^2`.
    fn sigma(&self) -> f64 {
        0.0
    }
    fn name(&self) -> &str;
}

fn huber(x: f64, mu: f64) -> f64 {
    if x.abs() <= mu {
        x * x / (2.0 * mu)
    } else {
        x.abs() - 0.5 * mu
    }
}

fn huber_grad(x: f64, mu: f64) -> f64 {
    if x.abs() <= mu {
        x / mu
    } else {
        x.signum()
    }
}

fn huber_grad_mu(x: f64, mu: f64) -> f64 {
    if x.abs() <= mu {
        -x * x / (2.0 * mu * mu)
    } else {
        -0.5
    }
}

/// `sum_i w_i |x_i|`, minimized at the origin.
#[derive(Debug, Clone)]
pub struct WeightedL1 {
    weights: Vector,
    origin: Vector,
}

impl WeightedL1 {
    pub fn new(weights: Vector) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("l1 weights must be finite and nonnegative".into()));
        }
        let origin = Vector::zeros(weights.len());
        Ok(Self { weights, origin })
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }
}

impl Objective for WeightedL1 {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        x.iter().zip(self.weights.iter()).map(|(x, w)| w * x.abs()).sum()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.zip_map(&self.weights, |x, w| if x == 0.0 { 0.0 } else { w * x.signum() })
    }
    fn sigma(&self) -> f64 {
        0.0
    }
    fn minimizer(&self) -> Option<&Vector> {
        Some(&self.origin)
    }
    fn optimal_value(&self) -> Option<f64> {
        Some(0.0)
    }
    fn name(&self) -> &str {
        "weighted_l1"
    }
}

/// Coordinate-wise Huber smoothing of `sum_i w_i |x_i|`.
#[derive(Debug, Clone)]
pub struct HuberL1 {
    base: WeightedL1,
    beta_s: f64,
}

impl HuberL1 {
    /// Overrides `beta_s`; only for exercising the certifier.
    pub fn with_beta_s(mut self, beta_s: f64) -> Self {
        self.beta_s = beta_s;
        self
    }
}

pub fn huber_l1(weights: Vector) -> Result<HuberL1> {
    let base = WeightedL1::new(weights)?;
    let beta_s = 0.5 * base.weights.sum();
    Ok(HuberL1 { base, beta_s })
}

impl SmoothApproximation for HuberL1 {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &Vector, mu: f64) -> f64 {
        x.iter().zip(self.base.weights.iter()).map(|(x, w)| w * huber(*x, mu)).sum()
    }
    fn grad_x(&self, x: &Vector, mu: f64) -> Vector {
        x.zip_map(&self.base.weights, |x, w| w * huber_grad(x, mu))
    }
    fn grad_mu(&self, x: &Vector, mu: f64) -> f64 {
        x.iter().zip(self.base.weights.iter()).map(|(x, w)| w * huber_grad_mu(*x, mu)).sum()
    }
    fn alpha_s(&self) -> f64 {
        self.base.weights.max()
    }
    fn beta_s(&self) -> f64 {
        self.beta_s
    }
    fn base(&self) -> &dyn Objective {
        &self.base
    }
    fn name(&self) -> &str {
        "huber_l1"
    }
}

/// `1/2 ||x - y||^2 + w * sum_i huber(x_i, mu)` for the denoising problem.
///
/// The quadratic part adds `1` to the gradient's Lipschitz constant, so
/// `alpha_s = w + mu_max` covers every `mu <= mu_max`.
#[derive(Debug, Clone)]
pub struct HuberDenoise {
    problem: L1Denoise,
    mu_max: f64,
}

pub fn huber_l1_denoise(problem: L1Denoise, mu_max: f64) -> Result<HuberDenoise> {
    if !(mu_max > 0.0 && mu_max.is_finite()) {
        return Err(Error::Config(format!("mu_max must be positive, got {mu_max}")));
    }
    Ok(HuberDenoise { problem, mu_max })
}

impl SmoothApproximation for HuberDenoise {
    fn dim(&self) -> usize {
        self.problem.dim()
    }
    fn value(&self, x: &Vector, mu: f64) -> f64 {
        let w = self.problem.weight();
        0.5 * (x - self.problem.data()).norm_squared() + w * x.iter().map(|x| huber(*x, mu)).sum::<f64>()
    }
    fn grad_x(&self, x: &Vector, mu: f64) -> Vector {
        let w = self.problem.weight();
        (x - self.problem.data()) + x.map(|x| w * huber_grad(x, mu))
    }
    fn grad_mu(&self, x: &Vector, mu: f64) -> f64 {
        self.problem.weight() * x.iter().map(|x| huber_grad_mu(*x, mu)).sum::<f64>()
    }
    fn alpha_s(&self) -> f64 {
        self.problem.weight() + self.mu_max
    }
    fn beta_s(&self) -> f64 {
        0.5 * self.problem.weight() * self.problem.dim() as f64
    }
    fn base(&self) -> &dyn Objective {
        &self.problem
    }
    fn sigma(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &str {
        "huber_l1_denoise"
    }
}

/// A smooth objective used as its own approximation (`grad_mu = 0`).
#[derive(Clone)]
pub struct ExactSmooth {
    f: Arc<dyn Objective>,
    alpha_s: f64,
    beta_s: f64,
}

impl ExactSmooth {
    /// `alpha_s` must be at least `L * mu_max` for an `L`-smooth `f`.
    pub fn new(f: Arc<dyn Objective>, alpha_s: f64, beta_s: f64) -> Result<Self> {
        if !(alpha_s > 0.0 && beta_s > 0.0) {
            return Err(Error::Config("alpha_s and beta_s must be positive".into()));
        }
        Ok(Self { f, alpha_s, beta_s })
    }
}

impl SmoothApproximation for ExactSmooth {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn value(&self, x: &Vector, _mu: f64) -> f64 {
        self.f.value(x)
    }
    fn grad_x(&self, x: &Vector, _mu: f64) -> Vector {
        self.f.gradient(x)
    }
    fn grad_mu(&self, _x: &Vector, _mu: f64) -> f64 {
        0.0
    }
    fn alpha_s(&self) -> f64 {
        self.alpha_s
    }
    fn beta_s(&self) -> f64 {
        self.beta_s
    }
    fn base(&self) -> &dyn Objective {
        self.f.as_ref()
    }
    fn sigma(&self) -> f64 {
        self.f.sigma()
    }
    fn name(&self) -> &str {
        "exact"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertReport {
    pub samples: usize,
    pub sandwich_failures: usize,
    pub band_failures: usize,
    pub smoothness_failures: usize,
    /// Largest violation of `f~ <= f <= f~ + beta_s mu` (negative when strict).
    pub worst_sandwich: f64,
    /// Largest violation of `-beta_s <= grad_mu <= 0`.
    pub worst_band: f64,
    /// Largest `||grad f~(y) - grad f~(x)|| * mu / (alpha_s ||y - x||)`.
    pub worst_smoothness_ratio: f64,
    /// First few failures in words.
    pub failures: Vec<String>,
    pub pass: bool,
}

const CERT_TOL: f64 = 1e-12;

/// Checks the sandwich, the `grad_mu` band and `(alpha_s / mu)`-smoothness on
/// `samples`. Smoothness uses consecutive pairs at the first sample's `mu`.
pub fn certify_smooth_approx(a: &dyn SmoothApproximation, samples: &[(Vector, f64)]) -> CertReport {
    let beta = a.beta_s();
    let mut r = CertReport {
        samples: samples.len(),
        sandwich_failures: 0,
        band_failures: 0,
        smoothness_failures: 0,
        worst_sandwich: f64::NEG_INFINITY,
        worst_band: f64::NEG_INFINITY,
        worst_smoothness_ratio: 0.0,
        failures: Vec::new(),
        pass: true,
    };
    let note = |r: &mut CertReport, msg: String| {
        if r.failures.len() < 10 {
            r.failures.push(msg);
        }
    };
    for (i, (x, mu)) in samples.iter().enumerate() {
        let (x, mu) = (x, *mu);
        let ft = a.value(x, mu);
        let f = a.base().value(x);
        let tol = CERT_TOL * (1.0 + f.abs());
        let viol = (ft - f).max(f - ft - beta * mu);
        r.worst_sandwich = r.worst_sandwich.max(viol);
        if viol > tol {
            r.sandwich_failures += 1;
            note(&mut r, format!("sandwich fails at sample {i} (mu = {mu}): f = {f}, f~ = {ft}"));
        }
        let g = a.grad_mu(x, mu);
        let band = g.max(-beta - g);
        r.worst_band = r.worst_band.max(band);
        if band > CERT_TOL * (1.0 + beta) {
            r.band_failures += 1;
            note(&mut r, format!("grad_mu = {g} outside [-{beta}, 0] at sample {i}"));
        }
        if let Some((y, _)) = samples.get(i + 1) {
            let dist = (y - x).norm();
            if dist > 0.0 {
                let ratio = (a.grad_x(y, mu) - a.grad_x(x, mu)).norm() * mu / (a.alpha_s() * dist);
                r.worst_smoothness_ratio = r.worst_smoothness_ratio.max(ratio);
                if ratio > 1.0 + 1e-9 {
                    r.smoothness_failures += 1;
                    note(&mut r, format!("gradient ratio {ratio} exceeds alpha_s/mu at sample {i}"));
                }
            }
        }
    }
    r.pass = samples.len() > 0 && r.sandwich_failures + r.band_failures + r.smoothness_failures == 0;
    r
}

/// `n` points from `region` paired with log-uniform `mu` in `[mu_lo, mu_hi]`.
pub fn random_samples(
    dim: usize,
    n: usize,
    region: &SamplingRegion,
    mu_range: (f64, f64),
    seed: u64,
) -> Result<Vec<(Vector, f64)>> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Config(format!("invalid mu range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = region.sample(dim, &mut rng)?;
            let mu = if lo == hi { lo } else { (rng.gen_range(lo.ln()..hi.ln())).exp() };
            Ok((x, mu))
        })
        .collect()
}

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `mu(t)`, its derivative, and optionally a closed form of
/// `integral_a^b nu' e^nu mu` so the budget carries no quadrature error.
#[derive(Clone)]
pub struct SmoothingSchedule {
    pub label: String,
    mu: TimeFn,
    mu_dot: TimeFn,
    rate_integral: Option<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for SmoothingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothingSchedule")
            .field("label", &self.label)
            .field("closed_form_budget", &self.rate_integral.is_some())
            .finish()
    }
}

impl SmoothingSchedule {
    pub fn new(
        label: impl Into<String>,
        mu: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            mu: Arc::new(mu),
            mu_dot: Arc::new(mu_dot),
            rate_integral: None,
        }
    }

    pub fn constant(mu: f64) -> Self {
        Self::new(format!("constant({mu})"), move |_| mu, |_| 0.0)
    }

    pub fn mu(&self, t: f64) -> f64 {
        (self.mu)(t)
    }

    pub fn mu_dot(&self, t: f64) -> f64 {
        (self.mu_dot)(t)
    }

    pub fn has_closed_form_budget(&self) -> bool {
        self.rate_integral.is_some()
    }

    /// `B(t) = beta_s * integral_{t0}^{t} nu' e^nu mu`, when available in closed form.
    pub fn budget(&self, beta_s: f64, t0: f64, t: f64) -> Option<f64> {
        self.rate_integral.as_ref().map(|r| beta_s * r(t0, t))
    }
}

/// Target decay of `nu' e^nu mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    /// `e^{-epsilon t}`.
    Exponential,
    /// `t^{-(1 + epsilon)}`.
    Polynomial,
}

/// `mu(t) = target(t) / (nu'(t) e^{nu(t)})`, which makes the budget integrable.
pub fn rate_preserving_mu(family: &ScheduleFamily, epsilon: f64, kind: DecayKind) -> Result<SmoothingSchedule> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let probe = family.interval().t_min.max(1e-3);
    if family.nu_ddot(probe).is_none() {
        return Err(Error::UnsupportedFamily(family.label()));
    }
    let (ln_target, dln_target): (fn(f64, f64) -> f64, fn(f64, f64) -> f64) = match kind {
        DecayKind::Exponential => (|e, t| -e * t, |e, _| -e),
        DecayKind::Polynomial => (|e, t| -(1.0 + e) * t.ln(), |e, t| -(1.0 + e) / t),
    };
    let fam = family.clone();
    let mu = move |t: f64| match fam.sample(t) {
        Ok(s) => (ln_target(epsilon, t) - s.nu - s.nu_dot.ln()).exp(),
        Err(_) => f64::NAN,
    };
    let mu_fn = mu.clone();
    let fam = family.clone();
    let mu_dot = move |t: f64| match (fam.sample(t), fam.nu_ddot(t)) {
        (Ok(s), Some(ndd)) => mu_fn(t) * (dln_target(epsilon, t) - ndd / s.nu_dot - s.nu_dot),
        _ => f64::NAN,
    };
    let rate_integral = move |a: f64, b: f64| match kind {
        DecayKind::Exponential => ((-epsilon * a).exp() - (-epsilon * b).exp()) / epsilon,
        DecayKind::Polynomial => (a.powf(-epsilon) - b.powf(-epsilon)) / epsilon,
    };
    let label = match kind {
        DecayKind::Exponential => format!("rate_preserving(exp(-{epsilon} t))"),
        DecayKind::Polynomial => format!("rate_preserving(t^-(1+{epsilon}))"),
    };
    let mut s = SmoothingSchedule::new(label, mu, mu_dot);
    s.rate_integral = Some(Arc::new(rate_integral));
    Ok(s)
}

/// Integrates the flow driven by `grad_x f~(x, mu(t))`, certified by the smoothed Lyapunov function.
pub fn smoothed_flow(
    h: &dyn DistanceGenerator,
    a: Arc<dyn SmoothApproximation>,
    family: &ScheduleFamily,
    mu_sched: &SmoothingSchedule,
    config: &IntegratorConfig,
    x0: &Vector,
    v0: &Vector,
) -> Result<Trajectory> {
    config.validate()?;
    let n = config.num_steps();
    let step = config.effective_step();
    for k in 0..=2 * n {
        let t = (config.t0 + 0.5 * k as f64 * step).min(config.t_end);
        let m = mu_sched.mu(t);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Schedule(format!("mu({t}) = {m} must be positive and finite")));
        }
        let md = mu_sched.mu_dot(t);
        if !(md <= 1e-12 * m) {
            return Err(Error::Schedule(format!("mu must be nonincreasing; mu'({t}) = {md}")));
        }
    }
    let xstar = a.base().minimizer().ok_or(Error::MissingMinimizer)?.clone();
    if default_variant(h, family).is_err() {
        return Err(Error::Precondition(format!(
            "{} uses e^pi > 0, which needs a symmetric divergence",
            family.label()
        )));
    }
    let variant = LyapunovVariant::Smoothed {
        approximation: a.clone(),
        schedule: mu_sched.clone(),
    };
    let sigma = if h.is_euclidean() { a.sigma() } else { 0.0 };
    let grad = |x: &Vector, t: f64| a.grad_x(x, mu_sched.mu(t));
    let beta = a.beta_s();
    let t0 = config.t0;
    let closed = |t: f64| mu_sched.budget(beta, t0, t).unwrap_or(f64::NAN);
    let engine = Engine {
        h,
        family,
        gradient: &grad,
        variant: &variant,
        objective: a.base(),
        xstar: &xstar,
        sigma,
        budget: if mu_sched.has_closed_form_budget() { Some(&closed) } else { None },
    };
    let mut traj = engine.run(config, x0, v0, a.base().name())?;
    traj.schedule = format!("{} with {}", traj.schedule, mu_sched.label);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::{finite_difference_gradient_error, Euclidean};
    use crate::dynamics::integrate;
    use crate::lyapunov::{bound_check, integral_estimates, lyapunov_value, monotonicity_report};
    use crate::problems::QuadraticObjective;
    use crate::dynamics::FlowState;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn huber_examples() {
        let a = huber_l1(v(&[1.0])).unwrap();
        assert_eq!(a.value(&v(&[0.0]), 1.0), 0.0);
        assert_eq!(a.base().value(&v(&[0.0])), 0.0);
        assert_eq!(a.value(&v(&[2.0]), 1.0), 1.5);
        assert_eq!(a.base().value(&v(&[2.0])) - a.value(&v(&[2.0]), 1.0), 0.5);
        assert_eq!(a.beta_s(), 0.5);
        assert_eq!(a.grad_mu(&v(&[0.5]), 1.0), -0.125);
        assert!(huber_l1(v(&[1.0, -0.1])).is_err());
    }

    #[test]
    fn huber_certifies() {
        let a = huber_l1(v(&[1.0, 0.5, 2.0])).unwrap();
        let samples = random_samples(3, 1000, &SamplingRegion::default(), (1e-3, 10.0), 3).unwrap();
        let r = certify_smooth_approx(&a, &samples);
        assert!(r.pass, "{:?}", r.failures);
    }

    #[test]
    fn halved_beta_fails_the_sandwich() {
        let a = huber_l1(v(&[1.0])).unwrap().with_beta_s(0.25);
        let samples = random_samples(1, 1000, &SamplingRegion::default(), (1e-3, 1.0), 3).unwrap();
        let r = certify_smooth_approx(&a, &samples);
        assert!(!r.pass);
        assert!(r.sandwich_failures > 0);
    }

    #[test]
    fn exact_approximation_certifies() {
        let f: Arc<dyn Objective> =
            Arc::new(QuadraticObjective::new(DMatrix::identity(2, 2), v(&[0.0, 0.0])).unwrap());
        let a = ExactSmooth::new(f, 1.0, 1e-3).unwrap();
        let samples = random_samples(2, 500, &SamplingRegion::default(), (1e-3, 1.0), 4).unwrap();
        assert!(certify_smooth_approx(&a, &samples).pass);
        assert!(certify_smooth_approx(&a, &[]).samples == 0);
    }

    #[test]
    fn denoise_approximation_certifies() {
        let p = L1Denoise::new(v(&[2.0, 0.1, -0.7]), 1.0).unwrap();
        let a = huber_l1_denoise(p, 10.0).unwrap();
        let samples = random_samples(3, 2000, &SamplingRegion::default(), (1e-4, 10.0), 5).unwrap();
        let r = certify_smooth_approx(&a, &samples);
        assert!(r.pass, "{:?}", r.failures);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = L1Denoise::new(v(&[2.0, 0.1]), 0.5).unwrap();
        let a = huber_l1_denoise(p, 1.0).unwrap();
        let h = huber_l1(v(&[1.0, 3.0])).unwrap();
        let samples = random_samples(2, 200, &SamplingRegion::default(), (0.05, 1.0), 6).unwrap();
        for (x, mu) in &samples {
            let e = finite_difference_gradient_error(|y| a.value(y, *mu), &a.grad_x(x, *mu), x, 1e-7);
            assert!(e <= 1e-6, "{e}");
            let e = finite_difference_gradient_error(|y| h.value(y, *mu), &h.grad_x(x, *mu), x, 1e-7);
            assert!(e <= 1e-6, "{e}");
        }
    }

    #[test]
    fn rate_preserving_examples() {
        let hyp = ScheduleFamily::hyperbolic(1.0).unwrap();
        let s = rate_preserving_mu(&hyp, 0.1, DecayKind::Exponential).unwrap();
        for t in [0.5f64, 2.0, 8.0] {
            let expect = (-0.1 * t).exp() * (t / 2.0).tanh() / (t / 2.0).sinh().powi(2);
            assert_relative_eq!(s.mu(t), expect, max_relative = 1e-12);
        }
        let poly = ScheduleFamily::polynomial(3.0).unwrap();
        let s = rate_preserving_mu(&poly, 1.0, DecayKind::Polynomial).unwrap();
        for t in [1.0, 2.0, 10.0] {
            assert_relative_eq!(s.mu(t), 0.5 / t.powi(3), max_relative = 1e-12);
        }
        let s = rate_preserving_mu(&hyp, 0.5, DecayKind::Exponential).unwrap();
        assert_relative_eq!(s.budget(2.0, 1.0, f64::INFINITY).unwrap(), 2.0 * (-0.5f64).exp() / 0.5);
    }

    #[test]
    fn rate_preserving_mu_dot_matches_finite_differences() {
        for fam in [
            ScheduleFamily::hyperbolic(1.0).unwrap(),
            ScheduleFamily::hyperbolic(0.0).unwrap(),
            ScheduleFamily::constant_damping(2.0, 1.0).unwrap(),
            ScheduleFamily::polynomial(4.0).unwrap(),
        ] {
            for kind in [DecayKind::Exponential, DecayKind::Polynomial] {
                let s = rate_preserving_mu(&fam, 0.5, kind).unwrap();
                for t in [0.5, 1.5, 6.0] {
                    let fd = (s.mu(t + 1e-6) - s.mu(t - 1e-6)) / 2e-6;
                    assert!((fd - s.mu_dot(t)).abs() <= 1e-5 * (1e-6 + s.mu_dot(t).abs()), "{}", fam.label());
                    assert!(s.mu_dot(t) < 0.0);
                }
            }
        }
    }

    #[test]
    fn custom_families_without_nu_are_unsupported() {
        let hyp = ScheduleFamily::hyperbolic(1.0).unwrap();
        let interval = hyp.interval();
        let custom = ScheduleFamily::Custom(crate::schedules::CustomSchedule::new("raw", interval, move |t| {
            hyp.sample(t).unwrap()
        }));
        assert!(matches!(
            rate_preserving_mu(&custom, 0.1, DecayKind::Exponential),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn smoothed_value_tends_to_standard() {
        let f: Arc<dyn Objective> =
            Arc::new(QuadraticObjective::new(DMatrix::identity(1, 1), v(&[0.0])).unwrap());
        let h = Euclidean::new(1);
        let fam = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        let s = fam.sample(1.0).unwrap();
        let st = FlowState {
            t: 1.0,
            x: v(&[0.7]),
            z: v(&[-0.2]),
        };
        let xs = v(&[0.0]);
        let smoothed = LyapunovVariant::Smoothed {
            approximation: Arc::new(ExactSmooth::new(f.clone(), 1.0, 1.0).unwrap()),
            schedule: SmoothingSchedule::constant(1e-14),
        };
        let a = lyapunov_value(&smoothed, &h, f.as_ref(), &s, &st, Some(&xs)).unwrap();
        let b = lyapunov_value(&LyapunovVariant::Standard, &h, f.as_ref(), &s, &st, Some(&xs)).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn constant_mu_on_smooth_base_matches_the_plain_flow() {
        let f: Arc<dyn Objective> =
            Arc::new(QuadraticObjective::new(DMatrix::from_diagonal(&v(&[1.0, 4.0])), v(&[0.0, 0.0])).unwrap());
        let h = Euclidean::new(2);
        let fam = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.0, 3.0, 1e-2).unwrap();
        let a: Arc<dyn SmoothApproximation> = Arc::new(ExactSmooth::new(f.clone(), 4.0, 1.0).unwrap());
        let x0 = v(&[1.0, -1.0]);
        let v0 = v(&[0.0, 0.0]);
        let s = smoothed_flow(&h, a, &fam, &SmoothingSchedule::constant(0.5), &cfg, &x0, &v0).unwrap();
        let p = integrate(&h, f.as_ref(), &fam, &cfg, &x0, &v0).unwrap();
        for (a, b) in s.samples.iter().zip(&p.samples) {
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn smoothed_denoise_run_satisfies_the_budgeted_bounds() {
        let p = L1Denoise::new(v(&[2.0, 0.1]), 1.0).unwrap();
        let fam = ScheduleFamily::hyperbolic(0.0).unwrap();
        let mu = rate_preserving_mu(&fam, 0.5, DecayKind::Exponential).unwrap();
        let cfg = IntegratorConfig::new(0.05, 6.0, 1e-3).unwrap().with_record_stride(10);
        let a: Arc<dyn SmoothApproximation> = Arc::new(huber_l1_denoise(p, mu.mu(0.05)).unwrap());
        let h = Euclidean::new(2);
        let traj = smoothed_flow(&h, a, &fam, &mu, &cfg, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
        let m = monotonicity_report(&traj);
        assert!(m.pass && m.budget_adjusted, "{m:?}");
        let b = bound_check(&traj);
        assert!(b.pass && b.budget_included, "{b:?}");
        assert!(integral_estimates(&traj).pass);
    }

    #[test]
    fn nonpositive_mu_is_rejected() {
        let f: Arc<dyn Objective> =
            Arc::new(QuadraticObjective::new(DMatrix::identity(1, 1), v(&[0.0])).unwrap());
        let a: Arc<dyn SmoothApproximation> = Arc::new(ExactSmooth::new(f, 1.0, 1.0).unwrap());
        let fam = ScheduleFamily::constant_damping(2.0, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.0, 1.0, 1e-2).unwrap();
        let sched = SmoothingSchedule::new("decays to zero", |t| 0.5 - t, |_| -1.0);
        let r = smoothed_flow(&Euclidean::new(1), a, &fam, &sched, &cfg, &v(&[1.0]), &v(&[0.0]));
        assert!(matches!(r, Err(Error::Schedule(_))));
    }
}
