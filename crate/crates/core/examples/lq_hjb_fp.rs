//! Linear-quadratic control on a grid: HJB backward, Fokker–Planck forward,
//! both compared with the Riccati solution.
//!
//! `cargo run --release --example lq_hjb_fp`

use mfflsim::control::{drift_field, gaussian_density, lq_reference, solve_fp_forward, solve_hjb_backward, ControlSet, Grid1D, LqProblem};

fn main() -> mfflsim::Result<()> {
    let lq = LqProblem { sigma: 1.0, q_terminal: 0.5, horizon: 1.0 };
    let controls = ControlSet::new(-4.0, 4.0, 161)?;
    let problem = lq.control_problem(controls);
    let grid = Grid1D::with_stable_steps(-3.0, 3.0, 121, 0.0, 1.0, lq.sigma, 2.0 * controls.max_abs())?;
    let (v, u) = solve_hjb_backward(&problem, &grid, None)?;

    println!("   x     v(0,x)    Riccati   u*(0,x)  Riccati");
    for x in [-2.0, -1.0, 0.0, 0.5, 1.5] {
        let (rv, ru) = lq_reference(&lq, 0.0, x);
        let i = ((x - grid.x_min) / grid.dx()).round() as usize;
        println!("{x:>5.1}  {:>8.4}  {rv:>8.4}  {:>8.4}  {ru:>7.4}", v.values[0][i], u.values[0][i]);
    }

    let mu0 = gaussian_density(&grid, 1.0, 0.1)?;
    let mu = solve_fp_forward(&mu0, &drift_field(&problem, &u), lq.sigma, &grid)?;
    for n in [0, grid.nt / 2, grid.nt] {
        println!("t = {:.2}: mass {:.12}, mean {:.4}, variance {:.4}", grid.time(n), mu.mass(n), mu.mean(n), mu.variance(n));
    }
    Ok(())
}
