//! Built-in convex test problems with known minimizers.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};

use crate::bregman::{DistanceGenerator, Euclidean, Objective};
use crate::{Error, Result, Vector};

/// `f(x) = 1/2 x^T Q x - b^T x` with `Q` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    b: Vector,
    xstar: Vector,
    fstar: f64,
    sigma: f64,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, b: Vector) -> Result<Self> {
        if !q.is_square() || q.nrows() != b.len() || b.is_empty() {
            return Err(Error::Config("Q must be square and match the length of b".into()));
        }
        if (&q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::Config("Q must be symmetric".into()));
        }
        let chol = Cholesky::new(q.clone()).ok_or_else(|| Error::Config("Q is not positive definite".into()))?;
        let xstar = chol.solve(&b);
        let fstar = -0.5 * b.dot(&xstar);
        let sigma = q.clone().symmetric_eigenvalues().min();
        if !(sigma > 0.0) {
            return Err(Error::Config("Q is not positive definite".into()));
        }
        Ok(Self { q, b, xstar, fstar, sigma })
    }

    /// Overrides the declared convexity constant (used to build negative controls).
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) - self.b.dot(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.q * x - &self.b
    }
    fn sigma(&self) -> f64 {
        self.sigma
    }
    fn minimizer(&self) -> Option<&Vector> {
        Some(&self.xstar)
    }
    fn optimal_value(&self) -> Option<f64> {
        Some(self.fstar)
    }
    fn suboptimality(&self, x: &Vector) -> Option<f64> {
        let d = x - &self.xstar;
        Some(0.5 * d.dot(&(&self.q * &d)))
    }
    fn name(&self) -> &str {
        "quadratic"
    }
}

/// `f(x) = 1/2 ||A x - b||^2` with `A` of full row rank and fewer rows than columns.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: Vector,
    xstar: Vector,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() || a.nrows() == 0 {
            return Err(Error::Config("A must have as many rows as b has entries".into()));
        }
        if a.nrows() >= a.ncols() {
            return Err(Error::Config("A must have fewer rows than columns".into()));
        }
        let gram = &a * a.transpose();
        let eig = gram.clone().symmetric_eigenvalues();
        if !(eig.min() > 1e-12 * eig.max().max(1.0)) {
            return Err(Error::Config("A is rank deficient".into()));
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::Config("A is rank deficient".into()))?;
        let xstar = a.transpose() * chol.solve(&b);
        Ok(Self { a, b, xstar })
    }
}

impl Objective for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.a.transpose() * (&self.a * x - &self.b)
    }
    fn sigma(&self) -> f64 {
        0.0
    }
    fn minimizer(&self) -> Option<&Vector> {
        Some(&self.xstar)
    }
    fn optimal_value(&self) -> Option<f64> {
        Some(0.0)
    }
    fn suboptimality(&self, x: &Vector) -> Option<f64> {
        Some(self.value(x))
    }
    fn name(&self) -> &str {
        "flat_quadratic"
    }
}

/// `f(x) = log sum_i exp(x_i)`; convex, unbounded below along `-1`, no minimizer.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    dim: usize,
}

impl LogSumExp {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Objective for LogSumExp {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        let m = x.max();
        m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let m = x.max();
        let e = x.map(|v| (v - m).exp());
        let total = e.sum();
        e / total
    }
    fn sigma(&self) -> f64 {
        0.0
    }
    fn name(&self) -> &str {
        "log_sum_exp"
    }
}

/// `f = 0`. Every point is a minimizer; the origin is declared.
#[derive(Debug, Clone)]
pub struct ZeroObjective {
    origin: Vector,
}

impl ZeroObjective {
    pub fn new(dim: usize) -> Self {
        Self { origin: Vector::zeros(dim) }
    }
}

impl Objective for ZeroObjective {
    fn dim(&self) -> usize {
        self.origin.len()
    }
    fn value(&self, _x: &Vector) -> f64 {
        0.0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
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
        "zero"
    }
}

/// Componentwise soft-thresholding `sign(y) max(|y| - w, 0)`.
pub fn soft_threshold(y: &Vector, w: f64) -> Vector {
    y.map(|v| v.signum() * (v.abs() - w).max(0.0))
}

/// `f(x) = 1/2 ||x - y||^2 + w ||x||_1`; nonsmooth, minimized by soft-thresholding.
#[derive(Debug, Clone)]
pub struct L1Denoise {
    y: Vector,
    weight: f64,
    xstar: Vector,
    fstar: f64,
}

impl L1Denoise {
    pub fn new(y: Vector, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Config(format!("l1 weight must be positive, got {weight}")));
        }
        let xstar = soft_threshold(&y, weight);
        let fstar = 0.5 * (&xstar - &y).norm_squared() + weight * xstar.lp_norm(1);
        Ok(Self { y, weight, xstar, fstar })
    }

    pub fn data(&self) -> &Vector {
        &self.y
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Largest violation of `0 in x* - y + w * subdiff ||.||_1 (x*)`.
    pub fn subgradient_residual(&self, x: &Vector) -> f64 {
        x.iter()
            .zip(self.y.iter())
            .map(|(&xi, &yi)| {
                if xi != 0.0 {
                    (xi - yi + self.weight * xi.signum()).abs()
                } else {
                    (yi.abs() - self.weight).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

impl Objective for L1Denoise {
    fn dim(&self) -> usize {
        self.y.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (x - &self.y).norm_squared() + self.weight * x.lp_norm(1)
    }
    /// Minimum-norm subgradient.
    fn gradient(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter().zip(self.y.iter()).map(|(&xi, &yi)| {
                if xi != 0.0 {
                    xi - yi + self.weight * xi.signum()
                } else {
                    -yi + self.weight * (yi / self.weight).clamp(-1.0, 1.0)
                }
            }),
        )
    }
    fn sigma(&self) -> f64 {
        1.0
    }
    fn minimizer(&self) -> Option<&Vector> {
        Some(&self.xstar)
    }
    fn optimal_value(&self) -> Option<f64> {
        Some(self.fstar)
    }
    fn name(&self) -> &str {
        "l1_denoise"
    }
}

/// A test problem: objective, paired generator and declared convexity constant.
#[derive(Clone)]
pub struct ProblemSpec {
    pub identifier: String,
    pub objective: Arc<dyn Objective>,
    pub generator: Arc<dyn DistanceGenerator>,
    pub sigma: f64,
    pub notes: String,
    l1: Option<L1Denoise>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("identifier", &self.identifier)
            .field("dim", &self.objective.dim())
            .field("sigma", &self.sigma)
            .field("notes", &self.notes)
            .finish()
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn minimizer(&self) -> &Vector {
        self.objective.minimizer().expect("shipped problems declare a minimizer")
    }

    /// The nonsmooth structure, for problems built by [`l1_denoise`].
    pub fn as_l1(&self) -> Option<&L1Denoise> {
        self.l1.as_ref()
    }

    /// Residual of the optimality certificate at the declared minimizer:
    /// the gradient norm, or the subgradient-membership violation for l1.
    pub fn optimality_residual(&self) -> f64 {
        let xstar = self.minimizer();
        match &self.l1 {
            Some(l1) => l1.subgradient_residual(xstar),
            None => self.objective.gradient(xstar).norm(),
        }
    }
}

/// Strongly convex quadratic `1/2 x^T Q x - b^T x`; `sigma = lambda_min(Q)` under `1/2 ||.||^2`.
pub fn quadratic(q: DMatrix<f64>, b: Vector) -> Result<ProblemSpec> {
    let n = b.len();
    let f = QuadraticObjective::new(q, b)?;
    let sigma = f.sigma();
    Ok(ProblemSpec {
        identifier: "quadratic".into(),
        objective: Arc::new(f),
        generator: Arc::new(Euclidean::new(n)),
        sigma,
        notes: "x* = Q^{-1} b (Cholesky solve)".into(),
        l1: None,
    })
}

/// `1/2 ||A x - b||^2` with wide full-row-rank `A`; `sigma = 0`.
pub fn flat_quadratic(a: DMatrix<f64>, b: Vector) -> Result<ProblemSpec> {
    let f = LeastSquares::new(a, b)?;
    let n = f.dim();
    Ok(ProblemSpec {
        identifier: "flat_quadratic".into(),
        objective: Arc::new(f),
        generator: Arc::new(Euclidean::new(n)),
        sigma: 0.0,
        notes: "x* = A^T (A A^T)^{-1} b (minimum-norm solution), f* = 0".into(),
        l1: None,
    })
}

/// `1/2 ||x - y||^2 + w ||x||_1`, consumed through a smooth approximation.
pub fn l1_denoise(y: Vector, w: f64) -> Result<ProblemSpec> {
    let f = L1Denoise::new(y, w)?;
    let n = f.dim();
    Ok(ProblemSpec {
        identifier: "l1_denoise".into(),
        objective: Arc::new(f.clone()),
        generator: Arc::new(Euclidean::new(n)),
        sigma: 0.0,
        notes: "x* = soft_threshold(y, w); certified by subgradient membership".into(),
        l1: Some(f),
    })
}

/// The strongly convex problem used by the canonical rate runs.
pub fn canonical_strongly_convex() -> ProblemSpec {
    quadratic(DMatrix::from_diagonal(&Vector::from_row_slice(&[1.0, 4.0])), Vector::zeros(2))
        .expect("diag(1, 4) is SPD")
}

/// The non-strongly-convex problem used by the canonical rate runs.
pub fn canonical_flat() -> ProblemSpec {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.3, 0.0]);
    flat_quadratic(a, Vector::from_row_slice(&[1.0, 1.3])).expect("full row rank")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::{check_uniform_convexity, finite_difference_gradient_error};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn identity_quadratic() {
        let p = quadratic(DMatrix::identity(3, 3), Vector::zeros(3)).unwrap();
        assert_eq!(p.minimizer(), &Vector::zeros(3));
        assert_relative_eq!(p.sigma, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_quadratic_minimizer() {
        let p = quadratic(DMatrix::from_diagonal(&v(&[1.0, 4.0])), v(&[1.0, 4.0])).unwrap();
        assert!((p.minimizer() - v(&[1.0, 1.0])).norm() < 1e-14);
        assert_relative_eq!(p.sigma, 1.0, epsilon = 1e-14);
        let ill = quadratic(DMatrix::from_diagonal(&v(&[1e-2, 1.0])), Vector::zeros(2)).unwrap();
        assert_relative_eq!(ill.sigma, 1e-2, epsilon = 1e-15);
    }

    #[test]
    fn non_spd_quadratic_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(quadratic(q, Vector::zeros(2)), Err(Error::Config(_))));
    }

    #[test]
    fn flat_quadratic_min_norm_solutions() {
        let p = flat_quadratic(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[0.0])).unwrap();
        assert_eq!(p.minimizer(), &Vector::zeros(2));
        assert_eq!(p.objective.optimal_value(), Some(0.0));
        assert_eq!(p.sigma, 0.0);
        let p = flat_quadratic(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[2.0])).unwrap();
        assert!((p.minimizer() - v(&[1.0, 1.0])).norm() < 1e-14);
        assert!(p.objective.value(p.minimizer()).abs() < 1e-28);
    }

    #[test]
    fn rank_deficient_rejected() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(flat_quadratic(a, v(&[1.0, 2.0])), Err(Error::Config(_))));
    }

    #[test]
    fn l1_denoise_minimizers() {
        let p = l1_denoise(v(&[2.0, 0.1]), 1.0).unwrap();
        assert_eq!(p.minimizer(), &v(&[1.0, 0.0]));
        assert!(p.optimality_residual() < 1e-15);
        let p = l1_denoise(Vector::zeros(2), 1.0).unwrap();
        assert_eq!(p.minimizer(), &Vector::zeros(2));
        assert_eq!(p.objective.optimal_value(), Some(0.0));
        let y = v(&[0.3, -1.7]);
        let p = l1_denoise(y.clone(), 1e-12).unwrap();
        assert!((p.minimizer() - y).amax() < 1e-11);
        assert!(l1_denoise(v(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn shipped_problems_are_certified() {
        let probs = [
            canonical_strongly_convex(),
            canonical_flat(),
            quadratic(
                DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.5]),
                v(&[1.0, -1.0, 0.5]),
            )
            .unwrap(),
            l1_denoise(v(&[2.0, 0.1, -1.5]), 1.0).unwrap(),
        ];
        for p in &probs {
            let rep = check_uniform_convexity(p.objective.as_ref(), p.generator.as_ref(), 1000, 9).unwrap();
            assert!(rep.pass, "{}: {rep:?}", p.identifier);
            assert!(p.optimality_residual() <= 1e-8, "{}", p.identifier);
            let fstar = p.objective.optimal_value().unwrap();
            assert!((p.objective.value(p.minimizer()) - fstar).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = v(&[0.3, -0.8, 1.1]);
        let objs: Vec<Box<dyn Objective>> = vec![
            Box::new(LogSumExp::new(3)),
            Box::new(
                QuadraticObjective::new(DMatrix::from_diagonal(&v(&[1.0, 2.0, 3.0])), v(&[1.0, 0.0, -1.0])).unwrap(),
            ),
            Box::new(LeastSquares::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]), v(&[1.0, 2.0])).unwrap()),
        ];
        for f in &objs {
            let err = finite_difference_gradient_error(|p| f.value(p), &f.gradient(&x), &x, 1e-5);
            assert!(err <= 1e-6, "{}: {err}", f.name());
        }
    }
}
