//! Continuous-time training dynamics: an Euler–Maruyama ensemble for one
//! client and the coupled federated particle system for several.
//!
//! `cargo run --example sde_dynamics`

use mfflsim::sde::{
    integrate_ensemble, integrate_particle_system, ControlSchedule, Diffusion, DriftKind, NoiseMode, ParticleClient, TimeGrid,
};
use mfflsim::task::{mixture_optimum, QuadraticTask, TaskSpec};
use mfflsim::{MixtureWeights, WeightVector};

fn main() -> mfflsim::Result<()> {
    let grid = TimeGrid::new(0.0, 3.0, 300)?;
    let task: TaskSpec = QuadraticTask::isotropic(vec![1.0], 1.0)?.into();
    let schedule = ControlSchedule::constant(0.0, 3.0, vec![1.0], 1.0)?;
    let paths = integrate_ensemble(
        &WeightVector::new(vec![-1.0]),
        &task,
        &DriftKind::LinearControlled,
        &schedule,
        &Diffusion::scalar(1, 0.3)?,
        &grid,
        9,
        2000,
    )?;
    let terminal: Vec<f64> = paths.iter().map(|p| p.terminal()[0]).collect();
    let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
    // E w_T = θ + (w0 − θ) e^{−T}
    println!("ensemble mean {mean:.4}, exact {:.4}", 1.0 - 2.0 * (-3.0f64).exp());

    let centers = [-2.0, 0.5, 1.5, 3.0];
    let tasks: Vec<TaskSpec> = centers
        .iter()
        .map(|c| QuadraticTask::isotropic(vec![*c], 1.0).map(Into::into))
        .collect::<mfflsim::Result<_>>()?;
    let alpha = MixtureWeights::uniform(tasks.len())?;
    let clients: Vec<ParticleClient> = tasks
        .iter()
        .map(|t| {
            Ok(ParticleClient {
                w0: WeightVector::zeros(1),
                task: t.clone(),
                schedule: ControlSchedule::constant(0.0, 3.0, vec![0.2], 1.0)?,
                sigma: Diffusion::scalar(1, 0.05)?,
            })
        })
        .collect::<mfflsim::Result<_>>()?;
    let run = integrate_particle_system(&clients, &alpha, &grid, 4, NoiseMode::IndependentPerClient)?;
    println!(
        "server {:.4} (mixture optimum {:.4}); clients {:?}",
        run.server.last().unwrap()[0],
        mixture_optimum(&tasks, &alpha)?[0],
        run.clients.iter().map(|c| format!("{:.3}", c.terminal()[0])).collect::<Vec<_>>()
    );
    Ok(())
}
