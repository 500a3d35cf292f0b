//! Continuous-time training dynamics integrated with Euler–Maruyama.
//!
//! All drifts use the descent orientation: a client following its gradient
//! field moves along `−Λ ∇L`, and the aggregation term of the coupled
//! federated system enters as `−Σ_j α_j ∇L_j`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::task::{self, MixtureWeights, TaskSpec, WeightVector};

/// Uniform grid on `[t0, t_end]` with `steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        let grid = TimeGrid { t0, t_end, steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t0) || !self.t0.is_finite() || !self.t_end.is_finite() {
            return Err(Error::invalid("time grid", "need finite t0 < t_end"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("time grid", "need at least one step"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_end
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }
}

/// Piecewise-constant diagonal learning-rate modulation `Λ_t`.
///
/// `breakpoints` has one more entry than `rates`; interval `i` is
/// `[breakpoints[i], breakpoints[i+1])`, the last one closed at the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSchedule {
    breakpoints: Vec<f64>,
    rates: Vec<Vec<f64>>,
    max_rate: f64,
}

impl ControlSchedule {
    pub fn new(breakpoints: Vec<f64>, rates: Vec<Vec<f64>>, max_rate: f64) -> Result<Self> {
        let s = ControlSchedule {
            breakpoints,
            rates,
            max_rate,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(t0: f64, t_end: f64, rates: Vec<f64>, max_rate: f64) -> Result<Self> {
        Self::new(vec![t0, t_end], vec![rates], max_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.len() != self.rates.len() + 1 || self.rates.is_empty() {
            return Err(Error::invalid("control schedule", "need one more breakpoint than intervals"));
        }
        if self.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("control schedule", "breakpoints must be strictly increasing"));
        }
        let d = self.rates[0].len();
        if d == 0 || self.rates.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("control schedule", "rates must share a non-zero dimension"));
        }
        if !(self.max_rate >= 0.0) {
            return Err(Error::invalid("control schedule", "max_rate must be non-negative"));
        }
        for r in self.rates.iter().flatten() {
            if !(0.0..=self.max_rate).contains(r) {
                return Err(Error::invalid(
                    "control schedule",
                    format!("rate {r} outside [0, {}]", self.max_rate),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.rates[0].len()
    }

    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[Vec<f64>] {
        &self.rates
    }

    /// Whether the schedule spans `[t0, t_end]` of `grid`.
    pub fn covers(&self, grid: &TimeGrid) -> bool {
        let tol = 1e-12 * (1.0 + grid.t_end.abs());
        self.breakpoints[0] <= grid.t0 + tol && *self.breakpoints.last().unwrap() >= grid.t_end - tol
    }

    /// Right-continuous lookup; times past the last breakpoint use the last
    /// interval.
    pub fn rates_at(&self, t: f64) -> &[f64] {
        let i = self.breakpoints[1..self.breakpoints.len() - 1]
            .partition_point(|&b| b <= t);
        &self.rates[i]
    }

    /// Applies `f(interval_start, interval_end, rates)` to every interval and
    /// clips the result to `[0, max_rate]`.
    pub fn map_clipped(&self, mut f: impl FnMut(f64, f64, &[f64]) -> Vec<f64>) -> ControlSchedule {
        let rates = self
            .rates
            .iter()
            .enumerate()
            .map(|(i, r)| {
                f(self.breakpoints[i], self.breakpoints[i + 1], r)
                    .into_iter()
                    .map(|v| v.clamp(0.0, self.max_rate))
                    .collect()
            })
            .collect();
        ControlSchedule {
            breakpoints: self.breakpoints.clone(),
            rates,
            max_rate: self.max_rate,
        }
    }
}

/// Constant diagonal diffusion `σ = diag(s_1, …, s_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Diffusion(Vec<f64>);

impl Diffusion {
    pub fn diagonal(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("diffusion", "entries must be finite and non-negative"));
        }
        Ok(Diffusion(values))
    }

    pub fn scalar(dim: usize, sigma: f64) -> Result<Self> {
        Self::diagonal(vec![sigma; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Draws a vector of independent `N(0, dt)` Brownian increments.
pub fn brownian_increments(rng: &mut StreamRng, dim: usize, dt: f64) -> Vec<f64> {
    let scale = dt.sqrt();
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `w + drift·Δt + σ·noise`, where `noise` holds `N(0, Δt)` increments.
pub fn euler_maruyama_step(
    w: &WeightVector,
    drift: &WeightVector,
    sigma: &Diffusion,
    dt: f64,
    noise: &[f64],
) -> Result<WeightVector> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let d = w.dim();
    for (context, actual) in [("drift", drift.dim()), ("diffusion", sigma.dim()), ("noise", noise.len())] {
        if actual != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                actual,
            });
        }
    }
    let next: Vec<f64> = (0..d)
        .map(|i| w[i] + drift[i] * dt + sigma.0[i] * noise[i])
        .collect();
    let next = WeightVector::new(next);
    if !next.is_finite() {
        return Err(Error::SdeDivergence { step: 0, client: None });
    }
    Ok(next)
}

/// Gradient map `b_t(g, Λ)` for generically controlled dynamics.
pub type ControlMap = Arc<dyn Fn(f64, &WeightVector, &[f64]) -> WeightVector + Send + Sync>;

/// Which drift a single trajectory follows.
#[derive(Clone)]
pub enum DriftKind {
    /// `dw = −∇L dt + σ dW`
    PlainSgd,
    /// `dw = −b_t(∇L, Λ_t) dt + σ dW`
    Controlled(ControlMap),
    /// `dw = −Λ_t ∇L dt + σ dW`
    LinearControlled,
    /// `dw = −(Λ_t ∇L + ∇L) dt + σ dW`: the coupled federated drift of a
    /// federation with a single client. Use [`integrate_particle_system`]
    /// for more than one.
    CoupledFederated,
}

impl fmt::Debug for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftKind::PlainSgd => "PlainSgd",
            DriftKind::Controlled(_) => "Controlled",
            DriftKind::LinearControlled => "LinearControlled",
            DriftKind::CoupledFederated => "CoupledFederated",
        })
    }
}

fn diag_mul(rates: &[f64], g: &WeightVector) -> WeightVector {
    WeightVector::new(rates.iter().zip(g.iter()).map(|(l, v)| l * v).collect())
}

impl DriftKind {
    /// Descent drift at `(t, w)` given the local gradient.
    pub fn drift(&self, t: f64, gradient: &WeightVector, rates: &[f64]) -> WeightVector {
        match self {
            DriftKind::PlainSgd => gradient.scaled(-1.0),
            DriftKind::Controlled(map) => map(t, gradient, rates).scaled(-1.0),
            DriftKind::LinearControlled => diag_mul(rates, gradient).scaled(-1.0),
            DriftKind::CoupledFederated => diag_mul(rates, gradient).add(gradient).scaled(-1.0),
        }
    }
}

/// Time-indexed states of one simulated path (`steps + 1` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct SdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<WeightVector>,
    pub seed: u64,
    pub client_id: usize,
}

impl SdeTrajectory {
    pub fn terminal(&self) -> &WeightVector {
        self.states.last().expect("trajectory has at least one state")
    }
}

fn check_inputs(w0: &WeightVector, task: &TaskSpec, schedule: &ControlSchedule, sigma: &Diffusion, grid: &TimeGrid) -> Result<()> {
    grid.validate()?;
    let d = w0.dim();
    for (context, actual) in [("task", task.dim()), ("schedule", schedule.dim()), ("diffusion", sigma.dim())] {
        if actual != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                actual,
            });
        }
    }
    if !schedule.covers(grid) {
        return Err(Error::invalid("control schedule", "does not cover the time grid"));
    }
    Ok(())
}

/// Integrates one path; the noise stream is keyed on `(seed, path_id)`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_path(
    w0: &WeightVector,
    task: &TaskSpec,
    kind: &DriftKind,
    schedule: &ControlSchedule,
    sigma: &Diffusion,
    grid: &TimeGrid,
    seed: u64,
    path_id: usize,
) -> Result<SdeTrajectory> {
    check_inputs(w0, task, schedule, sigma, grid)?;
    let dt = grid.dt();
    let mut rng = rng::stream(seed, &[path_id as u64]);
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(w0.clone());
    for n in 0..grid.steps {
        let t = grid.time(n);
        let w = &states[n];
        let diverged = |_| Error::SdeDivergence { step: n + 1, client: Some(path_id) };
        let g = task::grad(w, task).map_err(diverged)?;
        let drift = kind.drift(t, &g, schedule.rates_at(t));
        let noise = brownian_increments(&mut rng, w.dim(), dt);
        let next = euler_maruyama_step(w, &drift, sigma, dt, &noise).map_err(diverged)?;
        states.push(next);
    }
    Ok(SdeTrajectory {
        times: grid.times(),
        states,
        seed,
        client_id: path_id,
    })
}

/// Integrates a single client's controlled training dynamics.
pub fn integrate_trajectory(
    w0: &WeightVector,
    task: &TaskSpec,
    kind: &DriftKind,
    schedule: &ControlSchedule,
    sigma: &Diffusion,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SdeTrajectory> {
    integrate_path(w0, task, kind, schedule, sigma, grid, seed, 0)
}

/// Integrates `paths` independent copies of the same dynamics in parallel.
#[allow(clippy::too_many_arguments)]
pub fn integrate_ensemble(
    w0: &WeightVector,
    task: &TaskSpec,
    kind: &DriftKind,
    schedule: &ControlSchedule,
    sigma: &Diffusion,
    grid: &TimeGrid,
    seed: u64,
    paths: usize,
) -> Result<Vec<SdeTrajectory>> {
    (0..paths)
        .into_par_iter()
        .map(|p| integrate_path(w0, task, kind, schedule, sigma, grid, seed, p))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Client `k` draws from the stream keyed on `k`.
    #[default]
    IndependentPerClient,
    /// Every client sees the same Brownian path.
    Shared,
}

/// One member of the coupled federated particle system.
#[derive(Clone, Debug)]
pub struct ParticleClient {
    pub w0: WeightVector,
    pub task: TaskSpec,
    pub schedule: ControlSchedule,
    pub sigma: Diffusion,
}

#[derive(Clone, Debug)]
pub struct ParticleSystemRun {
    pub clients: Vec<SdeTrajectory>,
    /// Server weights integrated from `dw = −Σ_j α_j g_j dt`, started at the
    /// α-weighted mean of the initial client weights.
    pub server: Vec<WeightVector>,
    /// Aggregate gradient `Σ_j α_j g_j` used on each step (`steps` entries).
    pub aggregate: Vec<WeightVector>,
}

/// Integrates the federated particle system
/// `dw_k = −(Λ_k g_k + Σ_j α_j g_j) dt + σ_k dW_k`, recomputing the aggregate
/// at every step from all clients' current states.
pub fn integrate_particle_system(
    clients: &[ParticleClient],
    alpha: &MixtureWeights,
    grid: &TimeGrid,
    seed: u64,
    noise_mode: NoiseMode,
) -> Result<ParticleSystemRun> {
    if clients.len() != alpha.len() {
        return Err(Error::LengthMismatch {
            context: "clients vs mixture weights",
            left: clients.len(),
            right: alpha.len(),
        });
    }
    if clients.is_empty() {
        return Err(Error::invalid("clients", "no clients"));
    }
    let d = clients[0].w0.dim();
    for c in clients {
        if c.w0.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "client weights",
                expected: d,
                actual: c.w0.dim(),
            });
        }
        check_inputs(&c.w0, &c.task, &c.schedule, &c.sigma, grid)?;
    }
    let dt = grid.dt();
    let weights = alpha.as_slice();
    let mut rngs: Vec<StreamRng> = (0..clients.len())
        .map(|k| match noise_mode {
            NoiseMode::IndependentPerClient => rng::stream(seed, &[k as u64]),
            NoiseMode::Shared => rng::stream(seed, &[u64::MAX]),
        })
        .collect();

    let mut current: Vec<WeightVector> = clients.iter().map(|c| c.w0.clone()).collect();
    let mut history: Vec<Vec<WeightVector>> = current.iter().map(|w| vec![w.clone()]).collect();
    let mut server = WeightVector::zeros(d);
    for (w, a) in current.iter().zip(weights) {
        server.axpy(*a, w);
    }
    let mut server_path = vec![server.clone()];
    let mut aggregate_path = Vec::with_capacity(grid.steps);

    for n in 0..grid.steps {
        let t = grid.time(n);
        let grads: Vec<WeightVector> = clients
            .par_iter()
            .zip(&current)
            .enumerate()
            .map(|(k, (c, w))| {
                task::grad(w, &c.task).map_err(|_| Error::SdeDivergence { step: n, client: Some(k) })
            })
            .collect::<Result<_>>()?;
        let mut aggregate = WeightVector::zeros(d);
        for (g, a) in grads.iter().zip(weights) {
            aggregate.axpy(*a, g);
        }
        current = clients
            .par_iter()
            .zip(rngs.par_iter_mut())
            .zip(current.par_iter().zip(&grads))
            .enumerate()
            .map(|(k, ((c, rng), (w, g)))| {
                let mut drift = diag_mul(c.schedule.rates_at(t), g);
                drift.axpy(1.0, &aggregate);
                let drift = drift.scaled(-1.0);
                let noise = brownian_increments(rng, d, dt);
                euler_maruyama_step(w, &drift, &c.sigma, dt, &noise)
                    .map_err(|_| Error::SdeDivergence { step: n + 1, client: Some(k) })
            })
            .collect::<Result<_>>()?;
        for (h, w) in history.iter_mut().zip(&current) {
            h.push(w.clone());
        }
        server.axpy(-dt, &aggregate);
        if !server.is_finite() {
            return Err(Error::SdeDivergence { step: n + 1, client: None });
        }
        server_path.push(server.clone());
        aggregate_path.push(aggregate);
    }

    let times = grid.times();
    let trajectories = history
        .into_iter()
        .enumerate()
        .map(|(k, states)| SdeTrajectory {
            times: times.clone(),
            states,
            seed,
            client_id: k,
        })
        .collect();
    Ok(ParticleSystemRun {
        clients: trajectories,
        server: server_path,
        aggregate: aggregate_path,
    })
}

/// Least-squares slope of `log(error)` against `log(Δt)`, with
/// `Δt ∝ 1/steps`.
pub fn observed_order(steps: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&n| -(n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}
