//! Distance generators, objectives and Bregman divergences.
//!
//! A [`DistanceGenerator`] is the strongly convex function `h` that induces
//! the geometry of the flow; an [`Objective`] is the function `f` being
//! minimized. Everything else in the crate is built from
//! `D_h(y, x) = h(y) - h(x) - <grad h(x), y - x>`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result, Vector};

/// Region from which sampled checks draw points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SamplingRegion {
    /// The box `[lo, hi]^n`.
    Box { lo: f64, hi: f64 },
    /// The probability simplex, shrunk so every coordinate is at least `margin`.
    Simplex { margin: f64 },
}

impl Default for SamplingRegion {
    fn default() -> Self {
        SamplingRegion::Box { lo: -2.0, hi: 2.0 }
    }
}

impl SamplingRegion {
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Vector> {
        match *self {
            SamplingRegion::Box { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Config(format!("empty sampling box [{lo}, {hi}]")));
                }
                Ok(Vector::from_fn(dim, |_, _| rng.gen_range(lo..hi)))
            }
            SamplingRegion::Simplex { margin } => {
                let free = 1.0 - margin * dim as f64;
                if dim == 0 || margin < 0.0 || free <= 0.0 {
                    return Err(Error::Config(format!(
                        "simplex margin {margin} leaves no interior in dimension {dim}"
                    )));
                }
                // Normalized exponentials are uniform on the simplex.
                let raw: Vec<f64> = (0..dim)
                    .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                    .collect();
                let total: f64 = raw.iter().sum();
                Ok(Vector::from_iterator(
                    dim,
                    raw.into_iter().map(|e| margin + free * e / total),
                ))
            }
        }
    }
}

/// The convex function `h` generating Bregman divergences.
pub trait DistanceGenerator: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    /// `Hess h(point) * dir`.
    fn hessian_apply(&self, point: &Vector, dir: &Vector) -> Vector;
    /// Solves `Hess h(point) * w = rhs` for `w`.
    fn hessian_solve(&self, point: &Vector, rhs: &Vector) -> Result<Vector>;
    /// Modulus `m` with `Hess h >= m I` on the working domain.
    fn strong_convexity(&self) -> f64;
    /// Whether `D_h(x, y) = D_h(y, x)` for all `x, y`.
    fn is_symmetric(&self) -> bool;

    fn in_domain(&self, _x: &Vector) -> bool {
        true
    }

    /// `D_h(y, x)`. Implementors may override with a closed form that
    /// avoids cancellation; the result must agree with [`divergence_by_definition`].
    fn divergence(&self, y: &Vector, x: &Vector) -> f64 {
        divergence_by_definition(self, y, x)
    }

    /// Default region for sampled checks.
    fn region(&self) -> SamplingRegion {
        SamplingRegion::default()
    }

    /// True only for `h = 1/2 ||.||^2`, where the flow reduces to
    /// `x'' + delta' x' + grad f(x) = 0` when `eta = 2 alpha`.
    fn is_euclidean(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// `h(y) - h(x) - <grad h(x), y - x>` evaluated literally.
pub fn divergence_by_definition<H: DistanceGenerator + ?Sized>(h: &H, y: &Vector, x: &Vector) -> f64 {
    h.value(y) - h.value(x) - h.gradient(x).dot(&(y - x))
}

/// The function being minimized.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    /// Gradient, or a subgradient for nonsmooth objectives.
    fn gradient(&self, x: &Vector) -> Vector;
    /// Uniform-convexity constant relative to the generator this objective is paired with.
    fn sigma(&self) -> f64;
    fn minimizer(&self) -> Option<&Vector> {
        None
    }
    fn optimal_value(&self) -> Option<f64> {
        None
    }
    /// `f(x) - f(x*)`. Overridden where a cancellation-free form exists.
    fn suboptimality(&self, x: &Vector) -> Option<f64> {
        self.optimal_value().map(|fstar| self.value(x) - fstar)
    }
    fn name(&self) -> &str;
}

/// `D_f(y, x)` for an objective.
pub fn objective_divergence<F: Objective + ?Sized>(f: &F, y: &Vector, x: &Vector) -> f64 {
    f.value(y) - f.value(x) - f.gradient(x).dot(&(y - x))
}

fn check_domain<H: DistanceGenerator + ?Sized>(h: &H, p: &Vector) -> Result<()> {
    if p.len() != h.dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: point has {} entries, generator expects {}",
            p.len(),
            h.dim()
        )));
    }
    if h.in_domain(p) {
        Ok(())
    } else {
        Err(Error::Domain {
            point: p.iter().copied().collect(),
        })
    }
}

/// `D_h(y, x)` with domain checks. Round-off may leave a value slightly
/// below zero; it is returned as is.
pub fn bregman_div<H: DistanceGenerator + ?Sized>(h: &H, y: &Vector, x: &Vector) -> Result<f64> {
    check_domain(h, y)?;
    check_domain(h, x)?;
    Ok(h.divergence(y, x))
}

/// Residual of the three-point identity
/// `<grad h(x2) - grad h(x3), x1 - x2> = -D(x1,x2) + D(x1,x3) - D(x2,x3)`.
pub fn three_point_residual<H: DistanceGenerator + ?Sized>(
    h: &H,
    x1: &Vector,
    x2: &Vector,
    x3: &Vector,
) -> Result<f64> {
    for p in [x1, x2, x3] {
        check_domain(h, p)?;
    }
    let lhs = (h.gradient(x2) - h.gradient(x3)).dot(&(x1 - x2));
    let rhs = -h.divergence(x1, x2) + h.divergence(x1, x3) - h.divergence(x2, x3);
    Ok((lhs - rhs).abs())
}

/// Scale used to normalize a three-point residual.
pub fn three_point_scale<H: DistanceGenerator + ?Sized>(h: &H, x1: &Vector, x2: &Vector, x3: &Vector) -> f64 {
    1.0 + h.divergence(x1, x2).abs() + h.divergence(x1, x3).abs() + h.divergence(x2, x3).abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub sigma: f64,
    /// `min (D_f(y,x) - sigma D_h(y,x))` over the sampled pairs.
    pub min_slack: f64,
    pub worst_y: Vec<f64>,
    pub worst_x: Vec<f64>,
    pub region: SamplingRegion,
    pub pass: bool,
}

pub const CONVEXITY_TOL: f64 = 1e-10;

/// Sampled check of `D_f(y,x) >= sigma D_h(y,x)` on the generator's default region.
pub fn check_uniform_convexity<F, H>(f: &F, h: &H, num_samples: usize, seed: u64) -> Result<ConvexityReport>
where
    F: Objective + ?Sized,
    H: DistanceGenerator + ?Sized,
{
    check_uniform_convexity_in(f, h, h.region(), num_samples, seed)
}

pub fn check_uniform_convexity_in<F, H>(
    f: &F,
    h: &H,
    region: SamplingRegion,
    num_samples: usize,
    seed: u64,
) -> Result<ConvexityReport>
where
    F: Objective + ?Sized,
    H: DistanceGenerator + ?Sized,
{
    if num_samples == 0 {
        return Err(Error::Config("num_samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = f.sigma();
    let mut min_slack = f64::INFINITY;
    let mut worst = (Vec::new(), Vec::new());
    for _ in 0..num_samples {
        let y = region.sample(h.dim(), &mut rng)?;
        let x = region.sample(h.dim(), &mut rng)?;
        if !h.in_domain(&x) || !h.in_domain(&y) {
            return Err(Error::Config(format!(
                "sampling region {region:?} produced a point outside the domain of {}",
                h.name()
            )));
        }
        let slack = objective_divergence(f, &y, &x) - sigma * h.divergence(&y, &x);
        if slack < min_slack {
            min_slack = slack;
            worst = (y.iter().copied().collect(), x.iter().copied().collect());
        }
    }
    Ok(ConvexityReport {
        samples: num_samples,
        sigma,
        min_slack,
        worst_y: worst.0,
        worst_x: worst.1,
        region,
        pass: min_slack >= -CONVEXITY_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub samples: usize,
    /// `max |D_h(x,y) - D_h(y,x)|`.
    pub max_asymmetry: f64,
    /// `max |D_h(x,y) - D_h(y,x)| / (1 + |D_h(x,y)|)`.
    pub max_relative: f64,
    pub pass: bool,
}

pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn check_symmetry<H: DistanceGenerator + ?Sized>(h: &H, num_samples: usize, seed: u64) -> Result<SymmetryReport> {
    if num_samples == 0 {
        return Err(Error::Config("num_samples must be at least 1".into()));
    }
    let region = h.region();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_asymmetry = 0.0_f64;
    let mut max_relative = 0.0_f64;
    for _ in 0..num_samples {
        let x = region.sample(h.dim(), &mut rng)?;
        let y = region.sample(h.dim(), &mut rng)?;
        let dxy = bregman_div(h, &x, &y)?;
        let dyx = bregman_div(h, &y, &x)?;
        let diff = (dxy - dyx).abs();
        max_asymmetry = max_asymmetry.max(diff);
        max_relative = max_relative.max(diff / (1.0 + dxy.abs()));
    }
    Ok(SymmetryReport {
        samples: num_samples,
        max_asymmetry,
        max_relative,
        pass: max_relative <= SYMMETRY_TOL,
    })
}

/// Largest relative error between `gradient(x)` and central differences of `value`.
pub fn finite_difference_gradient_error(
    value: impl Fn(&Vector) -> f64,
    gradient: &Vector,
    x: &Vector,
    step: f64,
) -> f64 {
    let scale = 1.0 + gradient.amax();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let fd = (value(&xp) - value(&xm)) / (2.0 * step);
        worst = worst.max((fd - gradient[i]).abs() / scale);
    }
    worst
}

/// `h(x) = 1/2 ||x||^2`.
#[derive(Debug, Clone)]
pub struct Euclidean {
    dim: usize,
}

impl Euclidean {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl DistanceGenerator for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn hessian_apply(&self, _point: &Vector, dir: &Vector) -> Vector {
        dir.clone()
    }
    fn hessian_solve(&self, _point: &Vector, rhs: &Vector) -> Result<Vector> {
        Ok(rhs.clone())
    }
    fn strong_convexity(&self) -> f64 {
        1.0
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn divergence(&self, y: &Vector, x: &Vector) -> f64 {
        0.5 * (y - x).norm_squared()
    }
    fn is_euclidean(&self) -> bool {
        true
    }
    fn name(&self) -> &str {
        "euclidean"
    }
}

/// `h(x) = 1/2 sum_i w_i x_i^2` with all `w_i > 0`.
#[derive(Debug, Clone)]
pub struct WeightedQuadratic {
    weights: Vector,
}

impl WeightedQuadratic {
    pub fn new(weights: Vector) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("weights must be finite and positive".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }
}

impl DistanceGenerator for WeightedQuadratic {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.component_mul(x).dot(&self.weights)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.component_mul(&self.weights)
    }
    fn hessian_apply(&self, _point: &Vector, dir: &Vector) -> Vector {
        dir.component_mul(&self.weights)
    }
    fn hessian_solve(&self, _point: &Vector, rhs: &Vector) -> Result<Vector> {
        Ok(rhs.component_div(&self.weights))
    }
    fn strong_convexity(&self) -> f64 {
        self.weights.min()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn divergence(&self, y: &Vector, x: &Vector) -> f64 {
        let d = y - x;
        0.5 * d.component_mul(&d).dot(&self.weights)
    }
    fn name(&self) -> &str {
        "weighted_quadratic"
    }
}

/// `h(x) = 1/2 x^T M x` for a user-supplied SPD matrix, solved by Cholesky.
#[derive(Debug, Clone)]
pub struct DenseQuadratic {
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    min_eigenvalue: f64,
}

impl DenseQuadratic {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Config("generator matrix must be square and non-empty".into()));
        }
        if (&matrix - matrix.transpose()).amax() > 1e-12 * (1.0 + matrix.amax()) {
            return Err(Error::Config("generator matrix must be symmetric".into()));
        }
        let factor = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Config("generator matrix is not positive definite".into()))?;
        let min_eigenvalue = matrix.clone().symmetric_eigenvalues().min();
        Ok(Self {
            matrix,
            factor,
            min_eigenvalue,
        })
    }
}

impl DistanceGenerator for DenseQuadratic {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.matrix * x))
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.matrix * x
    }
    fn hessian_apply(&self, _point: &Vector, dir: &Vector) -> Vector {
        &self.matrix * dir
    }
    fn hessian_solve(&self, _point: &Vector, rhs: &Vector) -> Result<Vector> {
        Ok(self.factor.solve(rhs))
    }
    fn strong_convexity(&self) -> f64 {
        self.min_eigenvalue
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn divergence(&self, y: &Vector, x: &Vector) -> f64 {
        let d = y - x;
        0.5 * d.dot(&(&self.matrix * &d))
    }
    fn name(&self) -> &str {
        "dense_quadratic"
    }
}

/// Negative entropy `h(x) = sum_i x_i log x_i` on the open positive orthant.
///
/// Its divergence is the generalized KL divergence. The strong-convexity
/// modulus 1 holds on the simplex, where every coordinate is at most 1.
#[derive(Debug, Clone)]
pub struct NegEntropy {
    dim: usize,
}

impl NegEntropy {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl DistanceGenerator for NegEntropy {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        x.iter().map(|v| v * v.ln()).sum()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.map(|v| v.ln() + 1.0)
    }
    fn hessian_apply(&self, point: &Vector, dir: &Vector) -> Vector {
        dir.component_div(point)
    }
    fn hessian_solve(&self, point: &Vector, rhs: &Vector) -> Result<Vector> {
        if !self.in_domain(point) {
            return Err(Error::Numerical {
                point: point.iter().copied().collect(),
                reason: "entropy Hessian is singular outside the positive orthant".into(),
            });
        }
        Ok(rhs.component_mul(point))
    }
    fn strong_convexity(&self) -> f64 {
        1.0
    }
    fn is_symmetric(&self) -> bool {
        false
    }
    fn in_domain(&self, x: &Vector) -> bool {
        x.iter().all(|v| *v > 0.0 && v.is_finite())
    }
    fn divergence(&self, y: &Vector, x: &Vector) -> f64 {
        y.iter()
            .zip(x.iter())
            .map(|(&yi, &xi)| yi * (yi / xi).ln() - yi + xi)
            .sum()
    }
    fn region(&self) -> SamplingRegion {
        SamplingRegion::Simplex { margin: 1e-3 }
    }
    fn name(&self) -> &str {
        "neg_entropy"
    }
}
