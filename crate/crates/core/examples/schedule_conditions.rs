//! Evaluates the parameter inequalities of each damping family on a time grid.

use accel_flow::schedules::{check_general, check_general2, ScheduleFamily, TimeGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::linspace(1.0, 20.0, 400)?;
    let cases = [
        (ScheduleFamily::constant_damping(2.0, 1.0)?, 1.0),
        (ScheduleFamily::constant_damping(5.0, 1.0)?, 1.0),
        (ScheduleFamily::hyperbolic(1.0)?, 1.0),
        (ScheduleFamily::hyperbolic(0.0)?, 0.0),
        (ScheduleFamily::polynomial(6.0)?, 0.0),
        (ScheduleFamily::constant_damping(2.0, 1.0)?.with_rate_scale(2.0), 1.0),
    ];
    for (fam, sigma) in &cases {
        let report = if fam.uses_symmetric_term() {
            check_general2(fam, *sigma, true, &grid)?
        } else {
            check_general(fam, *sigma, &grid)?
        };
        let slacks: Vec<String> = report.max_slack.iter().map(|s| format!("{s:+.2e}")).collect();
        println!(
            "{:<55} {:?}: max slacks [{}] -> {}",
            fam.label(),
            report.system,
            slacks.join(", "),
            if report.pass { "pass" } else { "fail" }
        );
    }
    Ok(())
}
