//! Bregman divergences of the shipped generators, the three-point identity,
//! and a sampled uniform-convexity check.

use accel_flow::bregman::{
    bregman_div, check_uniform_convexity, three_point_residual, DistanceGenerator, Euclidean, NegEntropy,
    WeightedQuadratic,
};
use accel_flow::problems;
use accel_flow::Vector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Vector::from_vec(vec![0.2, 0.3, 0.5]);
    let y = Vector::from_vec(vec![0.6, 0.3, 0.1]);
    let w = Vector::from_vec(vec![0.7, 0.1, 0.2]);

    let gens: Vec<Box<dyn DistanceGenerator>> = vec![
        Box::new(Euclidean::new(3)),
        Box::new(WeightedQuadratic::new(Vector::from_vec(vec![1.0, 2.0, 4.0]))?),
        Box::new(NegEntropy::new(3)),
    ];
    for h in &gens {
        println!(
            "{:<20} D(y, x) = {:.6}  three-point residual = {:.2e}",
            h.name(),
            bregman_div(h.as_ref(), &y, &x)?,
            three_point_residual(h.as_ref(), &x, &y, &w)?
        );
    }

    let p = problems::canonical_strongly_convex();
    let report = check_uniform_convexity(p.objective.as_ref(), p.generator.as_ref(), 2000, 1)?;
    println!(
        "{} is {}-uniformly convex on {} samples: min slack {:.3e} -> {}",
        p.identifier, report.sigma, report.samples, report.min_slack, report.pass
    );
    Ok(())
}
