//! Builds a schedule from user-supplied scaling functions, then shows that a
//! deliberately invalid schedule is caught by both the condition checker and
//! the Lyapunov monotonicity test.

use std::sync::Arc;

use accel_flow::dynamics::{integrate_problem, IntegratorConfig};
use accel_flow::lyapunov::monotonicity_report;
use accel_flow::problems;
use accel_flow::schedules::{check_general, from_ki23, ScheduleFamily, TimeGrid};
use accel_flow::Vector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::linspace(0.5, 10.0, 200)?;
    let mapped = from_ki23(
        Arc::new(|t: f64| 2.0 * (t / 2.0).sinh().ln()),
        Arc::new(|t: f64| 1.0 / (t / 2.0).tanh()),
        Arc::new(|t: f64| (1.0 / (t / 2.0).tanh()).ln()),
        Arc::new(|t: f64| -1.0 / t.sinh()),
        1.0,
        &grid,
    )?;
    let s = mapped.sample(2.0)?;
    println!("mapped schedule at t = 2: delta' = {:.6}, eta = {:.6}", s.delta_dot, s.eta);
    println!("mapped schedule conditions pass: {}", check_general(&mapped, 1.0, &grid)?.pass);

    let bad = ScheduleFamily::constant_damping(2.0, 1.0)?.with_rate_scale(2.0);
    let report = check_general(&bad, 1.0, &grid)?;
    println!("{}: conditions pass {}, worst item {}", bad.label(), report.pass, report.worst_item);
    let problem = problems::canonical_strongly_convex();
    let cfg = IntegratorConfig::new(0.0, 20.0, 1e-3)?.with_record_stride(10);
    let traj = integrate_problem(&problem, &bad, &cfg, &Vector::from_vec(vec![1.0, 1.0]), &Vector::zeros(2))?;
    let mono = monotonicity_report(&traj);
    println!("largest V increment {:.3e} at t = {:.2}", mono.max_increment, mono.worst_time);
    Ok(())
}
