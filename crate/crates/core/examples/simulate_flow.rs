//! Integrates a constant-damping flow on a strongly convex quadratic, checks
//! its Lyapunov certificates and writes the trajectory as CSV.

use accel_flow::dynamics::{integrate_problem, IntegratorConfig};
use accel_flow::lyapunov::{bound_check, fit_rate, integral_estimates, monotonicity_report, FitModel, TimeInterval};
use accel_flow::problems;
use accel_flow::schedules::ScheduleFamily;
use accel_flow::Vector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = problems::canonical_strongly_convex();
    let family = ScheduleFamily::constant_damping(2.0, 1.0)?;
    let cfg = IntegratorConfig::new(0.0, 20.0, 1e-3)?.with_record_stride(10);
    let x0 = Vector::from_vec(vec![1.0, 1.0]);
    let traj = integrate_problem(&problem, &family, &cfg, &x0, &Vector::zeros(2))?;

    let mono = monotonicity_report(&traj);
    let bounds = bound_check(&traj);
    let integrals = integral_estimates(&traj);
    let fit = fit_rate(&traj, FitModel::Exponential, TimeInterval::new(10.0, 20.0))?;
    println!("V(t0) = {:.6}, f gap at t = 20: {:.3e}", traj.v0(), traj.last().diag.f_gap);
    println!("largest V increment {:.3e} -> {}", mono.max_increment, mono.pass);
    println!("worst gap ratio {:.4} -> {}", bounds.worst_gap_ratio, bounds.pass);
    println!("integral estimates -> {}", integrals.pass);
    println!("fitted rate {:.4} (predicted at least {:.4})", fit.rate(), family.predicted_rate().unwrap().value());

    let path = std::env::temp_dir().join("accel_flow_trajectory.csv");
    traj.save_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
