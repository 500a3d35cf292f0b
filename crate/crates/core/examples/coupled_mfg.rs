//! Mean-field game with a congestion penalty toward the population mean,
//! solved by damped HJB/FP alternation.
//!
//! `cargo run --release --example coupled_mfg`

use mfflsim::control::{gaussian_density, solve_coupled_mfg, ControlSet, Grid1D, LqProblem, MfgConfig};

fn main() -> mfflsim::Result<()> {
    let controls = ControlSet::new(-4.0, 4.0, 161)?;
    let grid = Grid1D::with_stable_steps(-3.0, 3.0, 121, 0.0, 1.0, 1.0, 2.0 * controls.max_abs())?;
    let mu0 = gaussian_density(&grid, 0.8, 0.25)?;
    for c in [0.0, 0.1, 1.0] {
        let problem = LqProblem::default().coupled_problem(c, controls);
        let sol = solve_coupled_mfg(&problem, &mu0, &grid, &MfgConfig::default())?;
        println!(
            "c = {c:<4} iterations {:>2}, converged {}, terminal mean {:.4}, terminal variance {:.4}",
            sol.iterations(),
            sol.converged,
            sol.density.mean(grid.nt),
            sol.density.variance(grid.nt)
        );
    }
    Ok(())
}
