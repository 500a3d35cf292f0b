//! Monte-Carlo payoffs of the LQ equilibrium and of unilateral deviations,
//! simulated with common random numbers.
//!
//! `cargo run --release --example nash_deviations`

use mfflsim::payoff::{estimate_payoff, nash_deviation_gap, random_perturbations, ControlBounds, CostSpec, Dynamics, Feedback, Perturbation};
use mfflsim::sde::TimeGrid;
use mfflsim::WeightVector;

fn main() -> mfflsim::Result<()> {
    let grid = TimeGrid::new(0.0, 1.0, 200)?;
    let dynamics = Dynamics::lq(1.0)?;
    let cost = CostSpec::Lq { q_terminal: 1.0 };
    let x0 = WeightVector::new(vec![0.0]);
    let equilibrium = Feedback::linear(-1.0, 0.0);

    let j = estimate_payoff(&x0, &equilibrium, &dynamics, &cost, &grid, 5000, 1)?;
    println!("J(u*) = {:.4} ± {:.4}  (value −0.5)", j.mean, j.stderr);

    let mut deviations = vec![Perturbation::Offset { delta: vec![0.5] }, Perturbation::Scale { factor: 0.5 }];
    deviations.extend(random_perturbations(6, 1, 1.0, (0.0, 1.0), 2));
    let report = nash_deviation_gap(&x0, &equilibrium, ControlBounds { lo: -4.0, hi: 4.0 }, &deviations, &dynamics, &cost, &grid, 5000, 1)?;
    for i in 0..deviations.len() {
        println!("{:<40} gap {:>8.4} ± {:.4}", report.labels[i], report.gaps[i], report.gap_stderr[i]);
    }
    println!("no profitable deviation: {}", report.no_profitable_deviation(4.0));
    Ok(())
}
