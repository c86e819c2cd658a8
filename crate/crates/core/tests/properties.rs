use accel_flow::bregman::{DenseQuadratic, DistanceGenerator, Euclidean, NegEntropy, WeightedQuadratic};
use accel_flow::dynamics::{rhs_general, rhs_l2, FlowState};
use accel_flow::lyapunov::{lyapunov_value, LyapunovVariant};
use accel_flow::problems;
use accel_flow::schedules::{check_general, ScheduleFamily, TimeGrid};
use accel_flow::smoothing::{huber_l1, SmoothApproximation};
use accel_flow::Vector;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vec3(range: std::ops::Range<f64>) -> impl Strategy<Value = Vector> {
    prop::collection::vec(range, 3).prop_map(Vector::from_vec)
}

fn generators() -> Vec<Box<dyn DistanceGenerator>> {
    vec![
        Box::new(Euclidean::new(3)),
        Box::new(WeightedQuadratic::new(Vector::from_vec(vec![0.25, 1.0, 5.0])).unwrap()),
        Box::new(DenseQuadratic::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 1.5])).unwrap()),
    ]
}

fn family_strategy() -> impl Strategy<Value = ScheduleFamily> {
    prop_oneof![
        (0.1..6.0f64, 0.05..4.0f64).prop_map(|(d, s)| ScheduleFamily::constant_damping(d, s).unwrap()),
        (0.0..4.0f64).prop_map(|s| ScheduleFamily::hyperbolic(s).unwrap()),
        (0.5..8.0f64).prop_map(|c| ScheduleFamily::polynomial(c).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bregman_divergence_is_nonnegative(x in vec3(-3.0..3.0), y in vec3(-3.0..3.0)) {
        for h in generators() {
            prop_assert!(h.divergence(&y, &x) >= -1e-12, "{}", h.name());
        }
    }

    #[test]
    fn entropy_divergence_is_nonnegative(x in vec3(1e-3..3.0), y in vec3(1e-3..3.0)) {
        let h = NegEntropy::new(3);
        prop_assert!(h.divergence(&y, &x) >= -1e-12);
    }

    #[test]
    fn hessian_solve_inverts_apply(x in vec3(0.01..3.0), v in vec3(-5.0..5.0)) {
        let mut all = generators();
        all.push(Box::new(NegEntropy::new(3)));
        for h in all {
            let back = h.hessian_apply(&x, &h.hessian_solve(&x, &v).unwrap());
            prop_assert!((back - &v).amax() <= 1e-10 * (1.0 + v.amax()), "{}", h.name());
        }
    }

    #[test]
    fn general_state_equation_specializes(
        fam in family_strategy(),
        frac in 0.0..1.0f64,
        x in prop::collection::vec(-2.0..2.0f64, 2),
        z in prop::collection::vec(-2.0..2.0f64, 2),
    ) {
        let p = problems::canonical_strongly_convex();
        let t = fam.default_t0().max(0.05) + 20.0 * frac;
        let s = fam.sample(t).unwrap();
        let state = FlowState { t, x: Vector::from_vec(x), z: Vector::from_vec(z) };
        let (gx, gz) = rhs_general(&Euclidean::new(2), p.objective.as_ref(), &s, &state).unwrap();
        let (lx, lz) = rhs_l2(p.objective.as_ref(), &s, &state).unwrap();
        let scale = 1.0_f64.max(lx.amax()).max(lz.amax());
        prop_assert!((gx - lx).amax().max((gz - lz).amax()) <= 1e-14 * scale);
    }

    #[test]
    fn lyapunov_value_is_nonnegative(
        fam in family_strategy(),
        frac in 0.0..1.0f64,
        x in prop::collection::vec(-3.0..3.0f64, 2),
        z in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let p = problems::canonical_strongly_convex();
        let t = fam.default_t0().max(0.05) + 10.0 * frac;
        let s = fam.sample(t).unwrap();
        let state = FlowState { t, x: Vector::from_vec(x), z: Vector::from_vec(z) };
        let variant = if fam.uses_symmetric_term() { LyapunovVariant::Symmetric } else { LyapunovVariant::Standard };
        let v = lyapunov_value(&variant, p.generator.as_ref(), p.objective.as_ref(), &s, &state, Some(p.minimizer())).unwrap();
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn valid_constant_damping_passes_conditions(d in 0.1..8.0f64, sigma in 0.05..4.0f64) {
        let fam = ScheduleFamily::constant_damping(d, sigma).unwrap();
        let grid = TimeGrid::linspace(0.0, 20.0, 64).unwrap();
        prop_assert!(check_general(&fam, sigma, &grid).unwrap().pass);
    }

    #[test]
    fn huber_sandwich_and_mu_band(x in vec3(-4.0..4.0), mu in 1e-4..5.0f64, w in vec3(0.1..3.0)) {
        let a = huber_l1(w).unwrap();
        let f = a.base().value(&x);
        let ft = a.value(&x, mu);
        let tol = 1e-12 * (1.0 + f.abs());
        prop_assert!(ft <= f + tol);
        prop_assert!(f <= ft + a.beta_s() * mu + tol);
        let g = a.grad_mu(&x, mu);
        prop_assert!(g <= 1e-12 && g >= -a.beta_s() - 1e-12);
    }
}
