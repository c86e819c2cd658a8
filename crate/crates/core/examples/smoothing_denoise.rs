//! Huber smoothing of l1 denoising with a rate-preserving smoothing schedule.

use accel_flow::cli::{run_smooth_demo, SmoothDemoSettings};
use accel_flow::smoothing::DecayKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for kind in [DecayKind::Exponential, DecayKind::Polynomial] {
        let settings = SmoothDemoSettings {
            kind,
            ..Default::default()
        };
        let demo = run_smooth_demo(&settings)?;
        let x = &demo.trajectory.last().state.x;
        println!(
            "{kind:?}: certification {}, V net of budget monotone {}, B(t_end) = {:.4}, x(t_end) = ({:.4}, {:.4}), gap {:.3e}",
            demo.certification.pass,
            demo.checks.monotonicity.pass,
            demo.budget,
            x[0],
            x[1],
            demo.trajectory.last().diag.f_gap
        );
    }
    Ok(())
}
