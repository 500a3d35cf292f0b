//! The preset scenarios. Each writes its artifacts and returns checks and
//! scalar metrics; orchestration lives in the parent module.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ClientsConfig, GridConfig, PicardDriftKind, ScenarioConfig, ScenarioKind, TaskFamily};
use super::io::{header, output_slices, ArtifactWriter, Cell};
use super::manifest::Check;
use crate::control::{self, ControlProblem, ControlSet, DensityGrid, Grid1D, LqProblem};
use crate::error::Result;
use crate::federated::{self, AggregationWeighting, Algorithm, ClientState, FedConfig};
use crate::meanfield::{self, FederatedDrift, InitialLaw, MeanFieldDrift, MeanReversion, PicardConfig};
use crate::payoff::{self, ControlBounds, CostSpec, Dynamics, Feedback, Perturbation};
use crate::rng::{self, derive_seed};
use crate::sde::{self, ControlSchedule, Diffusion, ParticleClient, TimeGrid};
use crate::task::{self, ClassConditional, LogisticTask, MixtureWeights, QuadraticTask, TaskSpec, WeightVector};

/// Stream tags separating the randomness of independent building blocks.
const TAG_CLIENTS: u64 = 1;
const TAG_FED: u64 = 2;
const TAG_SDE: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_PICARD: u64 = 5;
const TAG_PAYOFF: u64 = 6;
const TAG_PERTURB: u64 = 7;
const TAG_GC: u64 = 8;

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub converged: Option<bool>,
}

impl Outcome {
    fn metric(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.to_string(), value);
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }
}

pub fn run(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    match cfg.scenario {
        ScenarioKind::FedavgBaseline => fedavg_baseline(cfg, out),
        ScenarioKind::FedsgdEquivalence => fedsgd_equivalence(cfg, out),
        ScenarioKind::CoupledSde => coupled_sde(cfg, out),
        ScenarioKind::PicardEquilibrium => picard_equilibrium(cfg, out),
        ScenarioKind::LqHjbFp => lq_hjb_fp(cfg, out),
        ScenarioKind::CoupledMfg => coupled_mfg(cfg, out),
        ScenarioKind::NashCheck => nash_check(cfg, out),
        ScenarioKind::GcDiagnostic => gc_diagnostic(cfg, out),
    }
}

fn normal(rng: &mut rng::StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Builds the client population described by `cfg`.
pub fn generate_clients(cfg: &ClientsConfig, seed: u64) -> Result<Vec<ClientState>> {
    let mut rng = rng::stream(seed, &[TAG_CLIENTS]);
    (0..cfg.count)
        .map(|k| {
            let m = rng.random_range(cfg.sample_min..=cfg.sample_max);
            let shift: Vec<f64> = (0..cfg.dim).map(|_| cfg.center_mean + cfg.center_spread * normal(&mut rng)).collect();
            let task: TaskSpec = match cfg.family {
                TaskFamily::Quadratic => {
                    let mut curvature = vec![vec![0.0; cfg.dim]; cfg.dim];
                    for (i, row) in curvature.iter_mut().enumerate() {
                        row[i] = if cfg.curvature_max > cfg.curvature_min {
                            rng.random_range(cfg.curvature_min..cfg.curvature_max)
                        } else {
                            cfg.curvature_min
                        };
                    }
                    QuadraticTask::new(shift, curvature)?.into()
                }
                TaskFamily::Logistic => {
                    let classes = (0..cfg.classes)
                        .map(|c| {
                            let angle = 2.0 * PI * c as f64 / cfg.classes as f64;
                            let mut mean = shift.clone();
                            if cfg.dim == 1 {
                                mean[0] += cfg.separation * (c as f64 - 0.5 * (cfg.classes - 1) as f64);
                            } else {
                                mean[0] += cfg.separation * angle.cos();
                                mean[1] += cfg.separation * angle.sin();
                            }
                            let covariance = (0..cfg.dim)
                                .map(|i| (0..cfg.dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                                .collect();
                            ClassConditional { mean, covariance }
                        })
                        .collect();
                    LogisticTask::generate(classes, m, derive_seed(seed, &[TAG_CLIENTS, k as u64]), k)?.into()
                }
            };
            ClientState::new(task).with_sample_count(m)
        })
        .collect()
}

fn tasks_and_alpha(clients: &[ClientState]) -> Result<(Vec<TaskSpec>, MixtureWeights)> {
    Ok((clients.iter().map(|c| c.task.clone()).collect(), federated::sample_weights(clients)?))
}

/// Risk of the mixture optimum, when the family has a closed form.
fn optimum_risk(tasks: &[TaskSpec], alpha: &MixtureWeights) -> Result<Option<f64>> {
    if tasks.iter().all(|t| t.as_quadratic().is_some()) {
        let w = task::mixture_optimum(tasks, alpha)?;
        Ok(Some(task::mixture_risk(&w, tasks, alpha)?))
    } else {
        Ok(None)
    }
}

fn fed_config(cfg: &ScenarioConfig) -> FedConfig {
    FedConfig {
        seed: derive_seed(cfg.seed, &[TAG_FED, cfg.fed.seed]),
        ..cfg.fed.clone()
    }
}

fn fedavg_baseline(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let clients = generate_clients(&cfg.clients, cfg.seed)?;
    let (tasks, alpha) = tasks_and_alpha(&clients)?;
    let fed = fed_config(cfg);
    let initial = WeightVector::zeros(clients[0].task.dim());
    let initial_risk = task::mixture_risk(&initial, &tasks, &alpha)?;
    let logs = federated::run_federated(&clients, &initial, &fed, Algorithm::FedAvg)?;
    let opt = optimum_risk(&tasks, &alpha)?;

    let mut cols = vec!["round", "server_risk", "selected_count"];
    if opt.is_some() {
        cols.push("risk_gap");
    }
    out.csv(
        "rounds.csv",
        &header(&cols),
        logs.iter().map(|l| {
            let mut row = vec![Cell::I(l.round), Cell::F(l.server_risk), Cell::I(l.selected.len())];
            if let Some(o) = opt {
                row.push(Cell::F(l.server_risk - o));
            }
            row
        }),
    )?;

    let final_risk = logs.last().map_or(initial_risk, |l| l.server_risk);
    let mut o = Outcome::default();
    o.metric("initial_risk", initial_risk);
    o.metric("final_risk", final_risk);
    o.metric("rounds_run", logs.len() as f64);
    if let Some(opt) = opt {
        o.metric("optimum_risk", opt);
        o.metric("final_gap", final_risk - opt);
    }
    o.check("risk_decreased", final_risk < initial_risk, format!("{initial_risk:e} -> {final_risk:e}"));
    if let Some(target) = fed.target_risk {
        let reached = final_risk <= target;
        o.converged = Some(reached);
        o.check("target_reached", reached, format!("final {final_risk:e}, target {target:e}"));
    }
    Ok(o)
}

fn fedsgd_equivalence(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let clients = generate_clients(&cfg.clients, cfg.seed)?;
    let (tasks, alpha) = tasks_and_alpha(&clients)?;
    // the identity needs one full-batch epoch on every client
    let fed = FedConfig {
        client_fraction: 1.0,
        local_epochs: 1,
        batch_size: None,
        ..fed_config(cfg)
    };
    let eta = fed.learning_rate;
    let mut w_sgd = WeightVector::zeros(clients[0].task.dim());
    let mut w_avg = w_sgd.clone();
    let mut rows = Vec::with_capacity(fed.rounds);
    let (mut max_central, mut max_avg) = (0.0f64, 0.0f64);
    for round in 0..fed.rounds {
        let mut central = w_sgd.clone();
        central.axpy(-eta, &task::mixture_grad(&w_sgd, &tasks, &alpha)?);
        let next_sgd = federated::fedsgd_round(&clients, &w_sgd, &fed)?;
        let (next_avg, _) = federated::fedavg_round(&clients, &w_avg, &fed, round)?;
        let dc = next_sgd.max_abs_diff(&central);
        let da = next_sgd.max_abs_diff(&next_avg);
        max_central = max_central.max(dc);
        max_avg = max_avg.max(da);
        w_sgd = next_sgd;
        w_avg = next_avg;
        let risk = task::mixture_risk(&w_sgd, &tasks, &alpha)?;
        rows.push(vec![Cell::I(round), Cell::F(risk), Cell::F(dc), Cell::F(da)]);
    }
    out.csv("rounds.csv", &header(&["round", "fedsgd_risk", "central_step_diff", "fedavg_diff"]), rows)?;

    let mut o = Outcome::default();
    o.metric("max_central_step_diff", max_central);
    o.metric("max_fedavg_diff", max_avg);
    o.check("fedsgd_is_centralized_gd", max_central <= 1e-12, format!("max diff {max_central:e}"));
    let equal_counts = clients.windows(2).all(|w| w[0].sample_count == w[1].sample_count);
    if fed.aggregation_weighting == AggregationWeighting::SampleProportional || equal_counts {
        o.check("fedavg_matches_fedsgd", max_avg <= 1e-12, format!("max diff {max_avg:e}"));
    }
    Ok(o)
}

fn coupled_sde(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let clients = generate_clients(&cfg.clients, cfg.seed)?;
    let (tasks, alpha) = tasks_and_alpha(&clients)?;
    let s = &cfg.sde;
    let d = tasks[0].dim();
    let grid = TimeGrid::new(0.0, s.t_end, s.steps)?;
    let schedule = ControlSchedule::constant(0.0, s.t_end, vec![s.rate; d], s.max_rate)?;
    let sigma = Diffusion::scalar(d, s.sigma)?;
    let mut init_rng = rng::stream(cfg.seed, &[TAG_INIT]);
    let particles: Vec<ParticleClient> = tasks
        .iter()
        .map(|t| ParticleClient {
            w0: WeightVector::new((0..d).map(|_| s.init_spread * normal(&mut init_rng)).collect()),
            task: t.clone(),
            schedule: schedule.clone(),
            sigma: sigma.clone(),
        })
        .collect();
    let run = sde::integrate_particle_system(&particles, &alpha, &grid, derive_seed(cfg.seed, &[TAG_SDE]), s.noise_mode)?;

    let risks: Vec<f64> = run.server.iter().map(|w| task::mixture_risk(w, &tasks, &alpha)).collect::<Result<_>>()?;
    let opt = optimum_risk(&tasks, &alpha)?;
    let times = grid.times();
    let mut cols = vec!["t", "server_risk", "running_mean_risk"];
    if opt.is_some() {
        cols.push("risk_gap");
    }
    let mut running = Vec::with_capacity(risks.len());
    let mut integral = 0.0;
    for n in 0..risks.len() {
        if n == 0 {
            running.push(risks[0]);
        } else {
            integral += 0.5 * grid.dt() * (risks[n - 1] + risks[n]);
            running.push(integral / times[n]);
        }
    }
    out.csv(
        "server.csv",
        &header(&cols),
        (0..risks.len()).map(|n| {
            let mut row = vec![Cell::F(times[n]), Cell::F(risks[n]), Cell::F(running[n])];
            if let Some(o) = opt {
                row.push(Cell::F(risks[n] - o));
            }
            row
        }),
    )?;
    let client_rows = run
        .clients
        .iter()
        .zip(&tasks)
        .map(|(traj, t)| {
            Ok(vec![
                Cell::I(traj.client_id),
                Cell::F(alpha.as_slice()[traj.client_id]),
                Cell::F(task::risk(&traj.states[0], t)?),
                Cell::F(task::risk(traj.terminal(), t)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    out.csv("clients.csv", &header(&["client", "alpha", "initial_risk", "terminal_risk"]), client_rows)?;

    let mut o = Outcome::default();
    let final_risk = *risks.last().unwrap();
    o.metric("initial_server_risk", risks[0]);
    o.metric("final_server_risk", final_risk);
    let decreasing = running.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    o.check("time_average_decreasing", decreasing, "running time-average of the server risk");
    if let Some(opt) = opt {
        o.metric("optimum_risk", opt);
        o.metric("final_gap", final_risk - opt);
        o.check(
            "final_risk_near_optimum",
            final_risk - opt <= s.risk_tolerance,
            format!("gap {:e}, tolerance {:e}", final_risk - opt, s.risk_tolerance),
        );
    }
    Ok(o)
}

fn picard_equilibrium(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let p = &cfg.picard;
    let grid = TimeGrid::new(0.0, p.t_end, p.steps)?;
    let drift: Box<dyn MeanFieldDrift> = match p.drift {
        PicardDriftKind::MeanReversion => Box::new(MeanReversion { dim: p.dim, rate: p.rate }),
        PicardDriftKind::Federated => {
            let d = p.center.len();
            Box::new(FederatedDrift {
                task: QuadraticTask::isotropic(p.center.clone(), p.curvature)?.into(),
                schedule: ControlSchedule::constant(0.0, p.t_end, vec![p.rate; d], p.rate.max(1.0))?,
            })
        }
    };
    let d = drift.dim();
    let initial = InitialLaw::Gaussian {
        mean: vec![p.initial_mean; d],
        std: vec![p.initial_std; d],
    };
    let sigma = Diffusion::scalar(d, p.sigma)?;
    let picard = PicardConfig {
        paths: p.paths,
        tol: p.tol,
        max_iters: p.max_iters,
        damping: p.damping,
        projections: p.projections,
        seed: derive_seed(cfg.seed, &[TAG_PICARD]),
    };
    let result = meanfield::picard_fixed_point(&initial, drift.as_ref(), &sigma, &grid, &picard)?;

    out.csv(
        "history.csv",
        &header(&["iteration", "flow_distance"]),
        result.history.iter().enumerate().map(|(i, h)| vec![Cell::I(i + 1), Cell::F(*h)]),
    )?;
    let mut cols = vec!["t".to_string()];
    cols.extend((0..d).map(|i| format!("mean_{i}")));
    cols.extend((0..d).map(|i| format!("variance_{i}")));
    out.csv(
        "moments.csv",
        &cols,
        result.flow.times().iter().zip(result.flow.measures()).map(|(t, m)| {
            let mut row = vec![Cell::F(*t)];
            row.extend(m.mean().iter().map(|v| Cell::F(*v)));
            row.extend(m.variance().iter().map(|v| Cell::F(*v)));
            row
        }),
    )?;

    let mut o = Outcome {
        converged: Some(result.converged),
        ..Outcome::default()
    };
    o.metric("iterations", result.iterations() as f64);
    o.metric("final_flow_distance", *result.history.last().unwrap());
    o.check(
        "picard_converged",
        result.converged,
        format!("{} iterations, last distance {:e}", result.iterations(), result.history.last().unwrap()),
    );
    let terminal = result.flow.terminal();
    let values = terminal.coordinate(0);
    let variance = terminal.variance()[0];
    o.metric("terminal_mean", terminal.mean()[0]);
    o.metric("terminal_variance", variance);
    if p.drift == PicardDriftKind::MeanReversion {
        // the population mean is conserved, so each coordinate is an OU process
        let decay = (-2.0 * p.rate * p.t_end).exp();
        let stationary = if p.rate > 0.0 {
            p.sigma * p.sigma / (2.0 * p.rate) * (1.0 - decay)
        } else {
            p.sigma * p.sigma * p.t_end
        };
        let expected = decay * p.initial_std * p.initial_std + stationary;
        let (_, se_var) = meanfield::moment_standard_errors(&values);
        o.metric("expected_terminal_variance", expected);
        o.check(
            "terminal_variance_matches",
            (variance - expected).abs() <= 4.0 * se_var,
            format!("{variance:e} vs {expected:e} (se {se_var:e})"),
        );
    }
    Ok(o)
}

fn pde_grid(g: &GridConfig, horizon: f64, sigma: f64, controls: &ControlSet) -> Result<Grid1D> {
    // twice the control bound keeps the forward scheme positive as well
    Grid1D::with_stable_steps(g.x_min, g.x_max, g.node_count(), 0.0, horizon, sigma, 2.0 * controls.max_abs())
}

fn write_pde_fields(
    out: &mut ArtifactWriter,
    cfg: &ScenarioConfig,
    grid: &Grid1D,
    value: &[Vec<f64>],
    control: &[Vec<f64>],
    density: &DensityGrid,
) -> Result<()> {
    let slices = output_slices(grid.nt, cfg.grid.output_slices);
    out.matrix("value.csv", grid, value, &slices)?;
    out.matrix("control.csv", grid, control, &slices)?;
    out.matrix("density.csv", grid, &density.values, &slices)?;
    out.csv(
        "moments.csv",
        &header(&["t", "mass", "mean", "variance"]),
        slices.iter().map(|&n| {
            vec![
                Cell::F(grid.time(n)),
                Cell::F(density.mass(n)),
                Cell::F(density.mean(n)),
                Cell::F(density.variance(n)),
            ]
        }),
    )?;
    #[derive(serde::Serialize)]
    struct GridHeader<'a> {
        grid: &'a Grid1D,
        dx: f64,
        dt: f64,
        controls: &'a ControlSet,
        sigma: f64,
        slices: &'a [usize],
    }
    out.json(
        "grid.json",
        &GridHeader {
            grid,
            dx: grid.dx(),
            dt: grid.dt(),
            controls: &cfg.controls,
            sigma: cfg.lq.sigma,
            slices: &slices,
        },
    )
}

fn density_checks(o: &mut Outcome, density: &DensityGrid) {
    let mass = density.max_mass_error();
    let min = density.min_value();
    o.metric("fp_max_mass_error", mass);
    o.metric("fp_min_density", min);
    o.check("fp_mass_conserved", mass <= 1e-8, format!("max |mass - 1| = {mass:e}"));
    o.check("fp_positive", min >= -1e-12, format!("min density {min:e}"));
}

fn lq_hjb_fp(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let lq = cfg.lq;
    let problem = lq.control_problem(cfg.controls);
    let grid = pde_grid(&cfg.grid, lq.horizon, lq.sigma, &cfg.controls)?;
    let (value, control) = control::solve_hjb_backward(&problem, &grid, None)?;
    let mu0 = control::gaussian_density(&grid, cfg.grid.initial_mean, cfg.grid.initial_variance)?;
    let density = control::solve_fp_forward(&mu0, &control::drift_field(&problem, &control), lq.sigma, &grid)?;
    write_pde_fields(out, cfg, &grid, &value.values, &control.values, &density)?;

    let (mut ev, mut eu) = (0.0f64, 0.0f64);
    for i in 0..grid.nx {
        let x = grid.x(i);
        if x.abs() <= cfg.grid.interior + 1e-12 {
            let (v, u) = control::lq_reference(&lq, grid.t0, x);
            ev = ev.max((value.values[0][i] - v).abs());
            eu = eu.max((control.values[0][i] - u).abs());
        }
    }
    let mut o = Outcome::default();
    o.metric("nx", grid.nx as f64);
    o.metric("nt", grid.nt as f64);
    o.metric("v_linf_error", ev);
    o.metric("u_linf_error", eu);
    o.check("value_matches_riccati", ev <= 1e-2, format!("L-inf error {ev:e}"));
    o.check("control_matches_riccati", eu <= 2e-2, format!("L-inf error {eu:e}"));
    density_checks(&mut o, &density);
    if lq.q_terminal == 1.0 {
        // u* = −x turns the forward equation into an OU process
        let v0 = density.variance(0);
        let worst = (0..=grid.nt)
            .map(|n| {
                let t = grid.time(n);
                let s2 = lq.sigma * lq.sigma;
                let expected = (-2.0 * t).exp() * v0 + 0.5 * s2 * (1.0 - (-2.0 * t).exp());
                (density.variance(n) - expected).abs() / expected
            })
            .fold(0.0, f64::max);
        o.metric("ou_variance_rel_error", worst);
        o.check("ou_variance_matches", worst <= 2e-2, format!("max relative error {worst:e}"));
    }
    Ok(o)
}

fn coupled_mfg(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let lq = cfg.lq;
    let problem: ControlProblem = lq.coupled_problem(cfg.mfg.coupling, cfg.controls);
    let grid = pde_grid(&cfg.grid, lq.horizon, lq.sigma, &cfg.controls)?;
    let mu0 = control::gaussian_density(&grid, cfg.grid.initial_mean, cfg.grid.initial_variance)?;
    let sol = control::solve_coupled_mfg(&problem, &mu0, &grid, &cfg.mfg.solver())?;
    write_pde_fields(out, cfg, &grid, &sol.value.values, &sol.control.values, &sol.density)?;
    out.csv(
        "history.csv",
        &header(&["iteration", "l1_change"]),
        sol.history.iter().enumerate().map(|(i, h)| vec![Cell::I(i + 1), Cell::F(*h)]),
    )?;

    let mut o = Outcome {
        converged: Some(sol.converged),
        ..Outcome::default()
    };
    o.metric("iterations", sol.iterations() as f64);
    o.metric("final_change", *sol.history.last().unwrap());
    o.metric("terminal_mean", sol.density.mean(grid.nt));
    o.check(
        "mfg_converged",
        sol.converged,
        format!("{} iterations, last change {:e}", sol.iterations(), sol.history.last().unwrap()),
    );
    let tail = &sol.history[sol.history.len().saturating_sub(5)..];
    o.check(
        "tail_decreasing",
        tail.windows(2).all(|w| w[1] <= w[0]),
        format!("last changes {tail:?}"),
    );
    density_checks(&mut o, &sol.density);
    Ok(o)
}

/// Riccati feedback `u = −P(t) x`, tabulated on the simulation grid.
fn riccati_feedback(lq: &LqProblem, grid: &TimeGrid) -> Feedback {
    let gains: Vec<f64> = grid.times().iter().map(|&t| lq.riccati(t).0).collect();
    let (t0, dt, last) = (grid.t0, grid.dt(), grid.steps);
    Feedback::new(move |t, x| {
        let n = (((t - t0) / dt).round().max(0.0) as usize).min(last);
        WeightVector::new(vec![-gains[n] * x[0]])
    })
}

fn nash_check(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let lq = cfg.lq;
    let n = &cfg.nash;
    let tgrid = TimeGrid::new(0.0, lq.horizon, n.steps)?;
    let dynamics = Dynamics::lq(lq.sigma)?;
    let cost = CostSpec::Lq { q_terminal: lq.q_terminal };
    let equilibrium = riccati_feedback(&lq, &tgrid);
    let bounds = ControlBounds {
        lo: cfg.controls.lo,
        hi: cfg.controls.hi,
    };
    let mut perturbations = vec![Perturbation::Offset { delta: vec![n.offset] }];
    perturbations.extend(payoff::random_perturbations(
        n.perturbations,
        1,
        n.magnitude,
        (0.0, lq.horizon),
        derive_seed(cfg.seed, &[TAG_PERTURB]),
    ));
    let seed = derive_seed(cfg.seed, &[TAG_PAYOFF]);
    let x0 = WeightVector::new(vec![n.x0]);
    let report = payoff::nash_deviation_gap(&x0, &equilibrium, bounds, &perturbations, &dynamics, &cost, &tgrid, n.paths, seed)?;

    let problem = lq.control_problem(cfg.controls);
    let grid = pde_grid(&cfg.grid, lq.horizon, lq.sigma, &cfg.controls)?;
    let (value, _) = control::solve_hjb_backward(&problem, &grid, None)?;
    let verification = payoff::verification_check(&value, n.x0, &equilibrium, &dynamics, &cost, &tgrid, n.paths, seed, n.allowance)?;

    let rows = (0..perturbations.len()).map(|i| {
        vec![
            Cell::I(i),
            Cell::S(report.labels[i].clone()),
            Cell::F(report.perturbed[i].mean),
            Cell::F(report.perturbed[i].stderr),
            Cell::F(report.gaps[i]),
            Cell::F(report.gap_stderr[i]),
        ]
    });
    out.csv(
        "deviations.csv",
        &header(&["perturbation_id", "label", "payoff", "payoff_stderr", "gap", "gap_stderr"]),
        rows,
    )?;
    out.json("deviations.json", &report)?;
    out.json("verification.json", &verification)?;

    let mut o = Outcome::default();
    o.metric("baseline_payoff", report.baseline.mean);
    o.metric("baseline_stderr", report.baseline.stderr);
    o.metric("offset_gap", report.gaps[0]);
    o.metric("offset_gap_stderr", report.gap_stderr[0]);
    o.metric("value_at_x0", verification.value_at_x0);
    let max_z = report
        .gaps
        .iter()
        .zip(&report.gap_stderr)
        .map(|(g, s)| if *s > 0.0 { g / s } else if *g > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    o.metric("max_gap_z", max_z);
    o.check(
        "offset_strictly_worse",
        report.gaps[0] + 4.0 * report.gap_stderr[0] < 0.0,
        format!("gap {:e} ± {:e}", report.gaps[0], report.gap_stderr[0]),
    );
    o.check("no_profitable_deviation", report.no_profitable_deviation(4.0), format!("largest gap/stderr {max_z:.3}"));
    o.check(
        "verification_agrees",
        verification.agrees,
        format!(
            "v(0,x0) = {:e}, J = {:e} ± {:e}",
            verification.value_at_x0, verification.estimate.mean, verification.estimate.stderr
        ),
    );
    Ok(o)
}

fn gc_diagnostic(cfg: &ScenarioConfig, out: &mut ArtifactWriter) -> Result<Outcome> {
    let gc = &cfg.gc;
    let (mean, std) = (gc.mean, gc.std);
    let sampler = move |r: &mut rng::StreamRng| mean + std * normal(r);
    let seed = derive_seed(cfg.seed, &[TAG_GC]);
    let reference = meanfield::sample_measure(&sampler, gc.reference_size, seed, u64::MAX)?;
    let rows = meanfield::gc_diagnostic(&gc.p_values, &reference, &sampler, gc.replicates, seed)?;
    out.csv(
        "gc.csv",
        &header(&["p", "median_w1"]),
        rows.iter().map(|r| vec![Cell::I(r.p), Cell::F(r.median_w1)]),
    )?;
    let mut o = Outcome::default();
    for r in &rows {
        o.metric(&format!("median_w1_p{}", r.p), r.median_w1);
    }
    let strict = rows.windows(2).all(|w| w[1].median_w1 < w[0].median_w1);
    o.check("median_w1_strictly_decreasing", strict, format!("{:?}", rows.iter().map(|r| r.median_w1).collect::<Vec<_>>()));
    Ok(o)
}
