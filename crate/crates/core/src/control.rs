//! One-dimensional finite-difference solvers for the mean-field game system.
//!
//! * HJB, backward: `∂_t v + H(t, x, ∂_x v, ∂_xx v) = 0`, `v(T, ·) = g`, with
//!   `H = sup_u { f(t,x,u,m_t) + z·b(t,x,u) + ½σ²γ }` over a discretised
//!   control set. Explicit in time, centred in space, one-sided at the edges.
//! * Fokker–Planck, forward: `∂_t μ = −∂_x(b μ) + ½σ² ∂_xx μ` as a
//!   conservative finite-volume scheme with upwind advection and zero-flux
//!   walls. Edge cells are half cells, so the conserved quantity is exactly
//!   the trapezoidal mass.
//!
//! Everything is maximisation-oriented: costs enter as negative rewards.
//! The population couples into the running reward only through the mean of
//! the density at each time slice.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STABILITY_SAFETY: f64 = 0.9;
const STABILITY_EPS: f64 = 1e-12;

/// Space-time mesh `[x_min, x_max] × [t0, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t0: f64,
    pub t_end: f64,
    pub nt: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t0: f64, t_end: f64, nt: usize) -> Result<Self> {
        let g = Grid1D {
            x_min,
            x_max,
            nx,
            t0,
            t_end,
            nt,
        };
        g.validate()?;
        Ok(g)
    }

    /// Smallest number of time steps meeting the stability bound for the
    /// given diffusion and drift magnitude.
    pub fn with_stable_steps(
        x_min: f64,
        x_max: f64,
        nx: usize,
        t0: f64,
        t_end: f64,
        sigma: f64,
        max_drift: f64,
    ) -> Result<Self> {
        let mut g = Grid1D::new(x_min, x_max, nx, t0, t_end, 1)?;
        let limit = g.stability_limit(sigma, max_drift);
        g.nt = ((t_end - t0) / limit).ceil().max(1.0) as usize;
        while g.dt() > limit {
            g.nt += 1;
        }
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min) {
            return Err(Error::invalid("grid", "need x_min < x_max"));
        }
        if self.nx < 3 {
            return Err(Error::invalid("grid", "need at least three nodes"));
        }
        if !(self.t_end > self.t0) || self.nt == 0 {
            return Err(Error::invalid("grid", "need t0 < t_end and at least one step"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt as f64
    }

    /// Node `i`, measured from the domain centre so that symmetric domains
    /// have exactly mirrored nodes.
    pub fn x(&self, i: usize) -> f64 {
        let centre = 0.5 * (self.x_min + self.x_max);
        centre + (i as f64 - 0.5 * (self.nx - 1) as f64) * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.nt {
            self.t_end
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    /// `0.9 Δx² / (σ² + Δx·max|b| + ε)`
    pub fn stability_limit(&self, sigma: f64, max_drift: f64) -> f64 {
        let dx = self.dx();
        STABILITY_SAFETY * dx * dx / (sigma * sigma + dx * max_drift + STABILITY_EPS)
    }

    pub fn check_stability(&self, sigma: f64, max_drift: f64) -> Result<()> {
        let limit = self.stability_limit(sigma, max_drift);
        if self.dt() > limit {
            return Err(Error::StabilityViolation { dt: self.dt(), limit });
        }
        Ok(())
    }

    /// Trapezoidal quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx)
            .map(|i| if i == 0 || i == self.nx - 1 { 0.5 * dx } else { dx })
            .collect()
    }

    /// Linear interpolation of nodal `values` at `x`, clamped to the domain.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let s = ((x - self.x_min) / self.dx()).clamp(0.0, (self.nx - 1) as f64);
        let i = (s.floor() as usize).min(self.nx - 2);
        let frac = s - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }
}

/// Uniform finite control set on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSet {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for ControlSet {
    fn default() -> Self {
        ControlSet {
            lo: -5.0,
            hi: 5.0,
            count: 201,
        }
    }
}

impl ControlSet {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(hi >= lo) || (count == 1 && hi != lo) {
            return Err(Error::invalid("control set", "need lo <= hi and a non-empty grid"));
        }
        Ok(ControlSet { lo, hi, count })
    }

    /// Grid values in increasing order, placed symmetrically about the
    /// interval midpoint.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * (self.count - 1) as f64;
        (0..self.count).map(|j| mid + (j as f64 - half) * step).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// `f(t, x, u, m)` where `m` is the population mean at time `t`.
pub type RunningReward = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `g(x, m_T)`
pub type TerminalReward = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `b(t, x, u)`
pub type Drift = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A 1-D controlled diffusion `dX = b dt + σ dW` with reward `∫f dt + g`.
#[derive(Clone)]
pub struct ControlProblem {
    pub running: RunningReward,
    pub terminal: TerminalReward,
    pub drift: Drift,
    pub sigma: f64,
    pub controls: ControlSet,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("sigma", &self.sigma)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    /// Largest `|b|` over the grid nodes and control values at both ends of
    /// the horizon.
    pub fn max_drift(&self, grid: &Grid1D) -> f64 {
        let us = self.controls.values();
        let mut max: f64 = 0.0;
        for t in [grid.t0, grid.t_end] {
            for x in grid.xs() {
                for &u in &us {
                    max = max.max((self.drift)(t, x, u).abs());
                }
            }
        }
        max
    }
}

/// Linear-quadratic benchmark: `dX = u dt + σ dW`,
/// `f = −½(x² + u²)`, `g = −½ q_T x²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqProblem {
    pub sigma: f64,
    pub q_terminal: f64,
    pub horizon: f64,
}

impl Default for LqProblem {
    fn default() -> Self {
        LqProblem {
            sigma: 1.0,
            q_terminal: 1.0,
            horizon: 1.0,
        }
    }
}

impl LqProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if !(self.q_terminal >= 0.0) {
            return Err(Error::invalid("q_terminal", "must be non-negative"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        Ok(())
    }

    /// `(P(t), r(t))` with `Ṗ = P² − 1`, `P(T) = q_T`, `ṙ = ½σ²P`, `r(T) = 0`.
    pub fn riccati(&self, t: f64) -> (f64, f64) {
        let tau = (self.horizon - t).max(0.0);
        let half_var = 0.5 * self.sigma * self.sigma;
        if self.q_terminal == 1.0 {
            return (1.0, -half_var * tau);
        }
        // backward time τ = T − t: dP/dτ = 1 − P², dr/dτ = −½σ²P
        let steps = ((tau * 2000.0).ceil() as usize).max(1);
        let h = tau / steps as f64;
        let rhs = |p: f64| (1.0 - p * p, -half_var * p);
        let (mut p, mut r) = (self.q_terminal, 0.0);
        for _ in 0..steps {
            let k1 = rhs(p);
            let k2 = rhs(p + 0.5 * h * k1.0);
            let k3 = rhs(p + 0.5 * h * k2.0);
            let k4 = rhs(p + h * k3.0);
            p += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            r += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (p, r)
    }

    pub fn control_problem(&self, controls: ControlSet) -> ControlProblem {
        self.coupled_problem(0.0, controls)
    }

    /// LQ problem with the congestion term `−c (x − m_t)²` added to the
    /// running reward.
    pub fn coupled_problem(&self, coupling: f64, controls: ControlSet) -> ControlProblem {
        let q = self.q_terminal;
        ControlProblem {
            running: Arc::new(move |_t, x, u, m| -0.5 * (x * x + u * u) - coupling * (x - m) * (x - m)),
            terminal: Arc::new(move |x, _m| -0.5 * q * x * x),
            drift: Arc::new(|_t, _x, u| u),
            sigma: self.sigma,
            controls,
        }
    }
}

/// Analytic LQ value and optimal feedback: `v = −½P(t)x² + r(t)`, `u* = −P(t)x`.
pub fn lq_reference(problem: &LqProblem, t: f64, x: f64) -> (f64, f64) {
    let (p, r) = problem.riccati(t);
    (-0.5 * p * x * x + r, -p * x)
}

/// Pointwise Hamiltonian: the supremum over the control grid of
/// `f(t,x,u,m) + z·b(t,x,u) + ½σ²γ`, with one maximiser. Ties go to the
/// smallest control.
pub fn hamiltonian_pointwise(problem: &ControlProblem, t: f64, x: f64, z: f64, gamma: f64, mean: f64, controls: &[f64]) -> (f64, f64) {
    let diffusion = 0.5 * problem.sigma * problem.sigma * gamma;
    let mut best = f64::NEG_INFINITY;
    let mut best_u = controls[0];
    for &u in controls {
        let value = (problem.running)(t, x, u, mean) + z * (problem.drift)(t, x, u) + diffusion;
        if value > best {
            best = value;
            best_u = u;
        }
    }
    (best, best_u)
}

/// `v(t_n, x_i)` on an `(nt+1) × nx` mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValueFunction {
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
}

fn first_derivative(v: &[f64], i: usize, dx: f64) -> f64 {
    let n = v.len();
    if i == 0 {
        (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx)
    } else if i == n - 1 {
        (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx)
    } else {
        (v[i + 1] - v[i - 1]) / (2.0 * dx)
    }
}

fn second_derivative(v: &[f64], i: usize, dx: f64) -> f64 {
    let j = i.clamp(1, v.len() - 2);
    ((v[j + 1] + v[j - 1]) - 2.0 * v[j]) / (dx * dx)
}

impl GridValueFunction {
    /// Centred `∂_x v` at slice `n`, node `i` (second-order one-sided at the
    /// edges).
    pub fn z(&self, n: usize, i: usize) -> f64 {
        first_derivative(&self.values[n], i, self.grid.dx())
    }

    /// Centred `∂_xx v`; edge nodes reuse their neighbour's stencil.
    pub fn gamma(&self, n: usize, i: usize) -> f64 {
        second_derivative(&self.values[n], i, self.grid.dx())
    }

    pub fn at(&self, n: usize, x: f64) -> f64 {
        self.grid.interpolate(&self.values[n], x)
    }
}

/// Optimal feedback `u*(t_n, x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
    pub controls: ControlSet,
}

impl ControlGrid {
    /// Feedback at `(t, x)`: the slice at or before `t`, linear in `x`.
    pub fn at(&self, t: f64, x: f64) -> f64 {
        let s = ((t - self.grid.t0) / self.grid.dt()).floor().clamp(0.0, self.grid.nt as f64);
        self.grid.interpolate(&self.values[s as usize], x)
    }
}

/// Probability density on the mesh, one row per time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
}

impl DensityGrid {
    pub fn mass(&self, n: usize) -> f64 {
        slice_mass(&self.grid, &self.values[n])
    }

    pub fn mean(&self, n: usize) -> f64 {
        slice_mean(&self.grid, &self.values[n])
    }

    pub fn variance(&self, n: usize) -> f64 {
        let m = self.mean(n);
        let w = self.grid.trapezoid_weights();
        self.values[n]
            .iter()
            .zip(&w)
            .enumerate()
            .map(|(i, (mu, wi))| mu * wi * (self.grid.x(i) - m).powi(2))
            .sum::<f64>()
            / self.mass(n)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|mass − 1|` over all slices.
    pub fn max_mass_error(&self) -> f64 {
        (0..self.values.len())
            .map(|n| (self.mass(n) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn slice_mass(grid: &Grid1D, mu: &[f64]) -> f64 {
    mu.iter().zip(grid.trapezoid_weights()).map(|(m, w)| m * w).sum()
}

fn slice_mean(grid: &Grid1D, mu: &[f64]) -> f64 {
    let w = grid.trapezoid_weights();
    mu.iter()
        .zip(&w)
        .enumerate()
        .map(|(i, (m, wi))| m * wi * grid.x(i))
        .sum::<f64>()
        / slice_mass(grid, mu)
}

/// Samples `density` at the nodes and rescales to unit trapezoidal mass.
pub fn initial_density(grid: &Grid1D, density: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = grid.xs().into_iter().map(density).collect();
    if raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("initial density", "must be finite and non-negative"));
    }
    let mass = slice_mass(grid, &raw);
    if !(mass > 0.0) {
        return Err(Error::invalid("initial density", "zero mass on the grid"));
    }
    Ok(raw.into_iter().map(|v| v / mass).collect())
}

/// Gaussian density truncated to the grid.
pub fn gaussian_density(grid: &Grid1D, mean: f64, variance: f64) -> Result<Vec<f64>> {
    initial_density(grid, |x| (-(x - mean).powi(2) / (2.0 * variance)).exp())
}

fn hjb_slice(
    problem: &ControlProblem,
    grid: &Grid1D,
    v: &[f64],
    t: f64,
    mean: f64,
    controls: &[f64],
) -> Vec<(f64, f64)> {
    let dx = grid.dx();
    (0..grid.nx)
        .into_par_iter()
        .map(|i| {
            let z = first_derivative(v, i, dx);
            let gamma = second_derivative(v, i, dx);
            hamiltonian_pointwise(problem, t, grid.x(i), z, gamma, mean, controls)
        })
        .collect()
}

/// Explicit backward march of `∂_t v + H = 0` from `v(T) = g`.
///
/// `population_mean[n]`, when given, is the mean of the population at slice
/// `n` and feeds the running and terminal rewards; otherwise the mean is 0.
/// Returns the value function and the pointwise argmax control field.
pub fn solve_hjb_backward(
    problem: &ControlProblem,
    grid: &Grid1D,
    population_mean: Option<&[f64]>,
) -> Result<(GridValueFunction, ControlGrid)> {
    grid.validate()?;
    grid.check_stability(problem.sigma, problem.max_drift(grid))?;
    if let Some(m) = population_mean {
        if m.len() != grid.nt + 1 {
            return Err(Error::LengthMismatch {
                context: "population mean vs time slices",
                left: m.len(),
                right: grid.nt + 1,
            });
        }
    }
    let mean_at = |n: usize| population_mean.map_or(0.0, |m| m[n]);
    let controls = problem.controls.values();
    let dt = grid.dt();
    let mut v = vec![Vec::new(); grid.nt + 1];
    let mut u = vec![Vec::new(); grid.nt + 1];
    v[grid.nt] = grid
        .xs()
        .into_iter()
        .map(|x| (problem.terminal)(x, mean_at(grid.nt)))
        .collect();
    if v[grid.nt].iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSlice { solver: "hjb", slice: grid.nt });
    }
    for n in (0..grid.nt).rev() {
        let slice = hjb_slice(problem, grid, &v[n + 1], grid.time(n + 1), mean_at(n + 1), &controls);
        let next: Vec<f64> = v[n + 1].iter().zip(&slice).map(|(vi, (h, _))| vi + dt * h).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSlice { solver: "hjb", slice: n });
        }
        u[n + 1] = slice.into_iter().map(|(_, a)| a).collect();
        v[n] = next;
    }
    u[0] = hjb_slice(problem, grid, &v[0], grid.time(0), mean_at(0), &controls)
        .into_iter()
        .map(|(_, a)| a)
        .collect();
    Ok((
        GridValueFunction { grid: *grid, values: v },
        ControlGrid {
            grid: *grid,
            values: u,
            controls: problem.controls,
        },
    ))
}

/// Per-node argmax of the Hamiltonian integrand using centred differences
/// of `v`.
pub fn control_from_value(value: &GridValueFunction, problem: &ControlProblem, population_mean: Option<&[f64]>) -> ControlGrid {
    let grid = value.grid;
    let controls = problem.controls.values();
    let values = (0..=grid.nt)
        .map(|n| {
            let mean = population_mean.map_or(0.0, |m| m[n]);
            hjb_slice(problem, &grid, &value.values[n], grid.time(n), mean, &controls)
                .into_iter()
                .map(|(_, a)| a)
                .collect()
        })
        .collect();
    ControlGrid {
        grid,
        values,
        controls: problem.controls,
    }
}

/// Explicit conservative forward march of the Fokker–Planck equation.
///
/// `drift[n]` holds `b(t_n, x_i)` and drives the step from slice `n` to
/// `n + 1`. A cell can receive inflow through both faces, so positivity is
/// checked against the stability bound with twice the largest drift.
pub fn solve_fp_forward(mu0: &[f64], drift: &[Vec<f64>], sigma: f64, grid: &Grid1D) -> Result<DensityGrid> {
    grid.validate()?;
    if mu0.len() != grid.nx {
        return Err(Error::DimensionMismatch {
            context: "initial density",
            expected: grid.nx,
            actual: mu0.len(),
        });
    }
    if drift.len() < grid.nt || drift.iter().any(|row| row.len() != grid.nx) {
        return Err(Error::invalid("drift field", "must cover every time slice and node"));
    }
    if mu0.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("initial density", "must be non-negative"));
    }
    if (slice_mass(grid, mu0) - 1.0).abs() > 1e-8 {
        return Err(Error::invalid("initial density", "must have unit mass"));
    }
    let max_drift = drift.iter().flatten().fold(0.0f64, |m, b| m.max(b.abs()));
    grid.check_stability(sigma, 2.0 * max_drift)?;

    let dx = grid.dx();
    let dt = grid.dt();
    let diff = 0.5 * sigma * sigma;
    let widths = grid.trapezoid_weights();
    let nx = grid.nx;
    let mut values = Vec::with_capacity(grid.nt + 1);
    values.push(mu0.to_vec());
    let mut flux = vec![0.0; nx + 1];
    for n in 0..grid.nt {
        let mu = &values[n];
        let b = &drift[n];
        for f in 1..nx {
            let (l, r) = (f - 1, f);
            let vel = 0.5 * (b[l] + b[r]);
            flux[f] = vel.max(0.0) * mu[l] + vel.min(0.0) * mu[r] - diff * (mu[r] - mu[l]) / dx;
        }
        let next: Vec<f64> = (0..nx)
            .map(|i| mu[i] - dt / widths[i] * (flux[i + 1] - flux[i]))
            .collect();
        for (i, &v) in next.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteSlice { solver: "fokker-planck", slice: n + 1 });
            }
            if v < -1e-12 {
                return Err(Error::NegativeDensity { value: v, slice: n + 1, node: i });
            }
        }
        values.push(next);
    }
    Ok(DensityGrid { grid: *grid, values })
}

/// The drift field `b(t_n, x_i, u*(t_n, x_i))` induced by a control grid.
pub fn drift_field(problem: &ControlProblem, control: &ControlGrid) -> Vec<Vec<f64>> {
    let grid = control.grid;
    control
        .values
        .iter()
        .enumerate()
        .map(|(n, row)| {
            let t = grid.time(n);
            row.iter().enumerate().map(|(i, &u)| (problem.drift)(t, grid.x(i), u)).collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Density relaxation `β ∈ (0, 1]`.
    pub damping: f64,
}

impl Default for MfgConfig {
    fn default() -> Self {
        MfgConfig {
            tol: 1e-4,
            max_iters: 50,
            damping: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfgSolution {
    pub value: GridValueFunction,
    pub control: ControlGrid,
    pub density: DensityGrid,
    /// Sup-over-time L1 density change, one entry per iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl MfgSolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

fn sup_l1_change(grid: &Grid1D, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let w = grid.trapezoid_weights();
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .zip(&w)
                .map(|((p, q), wi)| (p - q).abs() * wi)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Alternating HJB/FP iteration for the coupled mean-field game.
///
/// The starting flow is the best response to a population frozen at `μ0`.
/// Each iteration solves HJB against the current flow's means, pushes `μ0`
/// forward under the resulting control, measures the sup-over-time L1
/// change, and relaxes `μ ← (1−β)μ + βμ_new`. Non-convergence is reported
/// through `converged`.
pub fn solve_coupled_mfg(problem: &ControlProblem, mu0: &[f64], grid: &Grid1D, cfg: &MfgConfig) -> Result<MfgSolution> {
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 || !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::invalid("mfg config", "need tol > 0, max_iters >= 1, damping in (0, 1]"));
    }
    let means_of = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().map(|r| slice_mean(grid, r)).collect() };
    let frozen = vec![slice_mean(grid, mu0); grid.nt + 1];
    let (_, control) = solve_hjb_backward(problem, grid, Some(&frozen))?;
    let mut density = solve_fp_forward(mu0, &drift_field(problem, &control), problem.sigma, grid)?;

    let mut history = Vec::new();
    let beta = cfg.damping;
    for _ in 0..cfg.max_iters {
        let means = means_of(&density.values);
        let (value, control) = solve_hjb_backward(problem, grid, Some(&means))?;
        let fresh = solve_fp_forward(mu0, &drift_field(problem, &control), problem.sigma, grid)?;
        let change = sup_l1_change(grid, &fresh.values, &density.values);
        history.push(change);
        if beta < 1.0 {
            for (old, new) in density.values.iter_mut().zip(&fresh.values) {
                for (o, n) in old.iter_mut().zip(new) {
                    *o = (1.0 - beta) * *o + beta * n;
                }
            }
        } else {
            density = fresh;
        }
        if change <= cfg.tol {
            return Ok(MfgSolution {
                value,
                control,
                density,
                history,
                converged: true,
            });
        }
        if history.len() == cfg.max_iters {
            return Ok(MfgSolution {
                value,
                control,
                density,
                history,
                converged: false,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn zero_problem(sigma: f64) -> ControlProblem {
        ControlProblem {
            running: Arc::new(|_, _, _, _| 0.0),
            terminal: Arc::new(|_, _| 0.0),
            drift: Arc::new(|_, _, _| 0.0),
            sigma,
            controls: ControlSet::new(-1.0, 1.0, 5).unwrap(),
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let lq = LqProblem::default().control_problem(ControlSet::new(-5.0, 5.0, 1001).unwrap());
        let us = lq.controls.values();
        let (h, u) = hamiltonian_pointwise(&lq, 0.0, 0.0, 2.0, 0.0, 0.0, &us);
        assert!((h - 2.0).abs() < 1e-12 && (u - 2.0).abs() < 1e-12, "{h} {u}");

        let flat = zero_problem(1.0);
        let us = flat.controls.values();
        assert_eq!(hamiltonian_pointwise(&flat, 0.0, 0.3, 0.0, 0.0, 0.0, &us), (0.0, -1.0));
        assert_eq!(hamiltonian_pointwise(&flat, 0.0, 0.3, 0.0, 4.0, 0.0, &us).0, 2.0);
    }

    #[test]
    fn control_set_is_symmetric() {
        let v = ControlSet::new(-4.0, 4.0, 401).unwrap().values();
        for j in 0..401 {
            assert_eq!(v[j], -v[400 - j]);
        }
        assert_eq!(v[200], 0.0);
        let g = Grid1D::new(-3.0, 3.0, 301, 0.0, 1.0, 10).unwrap();
        for i in 0..301 {
            assert_eq!(g.x(i), -g.x(300 - i));
        }
    }

    #[test]
    fn hjb_trivial_and_frozen() {
        let grid = Grid1D::new(-1.0, 1.0, 21, 0.0, 1.0, 50).unwrap();
        let (v, _) = solve_hjb_backward(&zero_problem(0.5), &grid, None).unwrap();
        assert!(v.values.iter().flatten().all(|x| *x == 0.0));

        let frozen = ControlProblem {
            terminal: Arc::new(|x, _| x * x),
            ..zero_problem(0.0)
        };
        let (v, _) = solve_hjb_backward(&frozen, &grid, None).unwrap();
        for row in &v.values {
            for (i, val) in row.iter().enumerate() {
                assert_eq!(*val, grid.x(i).powi(2));
            }
        }
    }

    #[test]
    fn hjb_rejects_unstable_grid() {
        let grid = Grid1D::new(-1.0, 1.0, 101, 0.0, 1.0, 10).unwrap();
        assert!(matches!(
            solve_hjb_backward(&zero_problem(1.0), &grid, None),
            Err(Error::StabilityViolation { .. })
        ));
    }

    #[test]
    fn lq_reference_examples() {
        let lq = LqProblem::default();
        assert_eq!(lq_reference(&lq, 0.0, 0.0).0, -0.5);
        for t in [0.0, 0.3, 1.0] {
            let (v, u) = lq_reference(&lq, t, 1.0);
            assert!((v - (-0.5 - (1.0 - t) / 2.0)).abs() < 1e-15);
            assert_eq!(u, -1.0);
        }
        let other = LqProblem { q_terminal: 0.3, ..lq };
        let (v, u) = lq_reference(&other, 1.0, 2.0);
        assert!((v + 0.5 * 0.3 * 4.0).abs() < 1e-15 && (u + 0.6).abs() < 1e-15);
    }

    #[test]
    fn numeric_riccati_matches_tanh_solution() {
        // dP/dτ = 1 − P², P(0) = q < 1  ⇒  P = tanh(τ + atanh q)
        let lq = LqProblem { q_terminal: 0.25, sigma: 0.8, horizon: 2.0 };
        for t in [0.0, 0.5, 1.7] {
            let tau: f64 = 2.0 - t;
            let a = 0.25f64.atanh();
            let p = (tau + a).tanh();
            // r = −½σ² ∫ tanh = −½σ² [ln cosh(τ + a) − ln cosh a]
            let r = -0.5 * 0.64 * ((tau + a).cosh().ln() - a.cosh().ln());
            let (pn, rn) = lq.riccati(t);
            assert!((pn - p).abs() < 1e-10 && (rn - r).abs() < 1e-10, "{pn} {p} {rn} {r}");
        }
    }

    fn lq_errors(dx: f64, q: f64, controls: ControlSet) -> (f64, f64) {
        let lq = LqProblem { q_terminal: q, ..LqProblem::default() };
        let problem = lq.control_problem(controls);
        let nx = (6.0 / dx).round() as usize + 1;
        let grid = Grid1D::with_stable_steps(-3.0, 3.0, nx, 0.0, 1.0, 1.0, controls.max_abs()).unwrap();
        let (v, u) = solve_hjb_backward(&problem, &grid, None).unwrap();
        let mut ev: f64 = 0.0;
        let mut eu: f64 = 0.0;
        for i in 0..grid.nx {
            let x = grid.x(i);
            if x.abs() <= 2.0 + 1e-9 {
                let (rv, ru) = lq_reference(&lq, 0.0, x);
                ev = ev.max((v.values[0][i] - rv).abs());
                eu = eu.max((u.values[0][i] - ru).abs());
            }
        }
        (ev, eu)
    }

    #[test]
    fn hjb_reproduces_lq_oracle() {
        let (ev, eu) = lq_errors(0.02, 1.0, ControlSet::new(-4.0, 4.0, 401).unwrap());
        assert!(ev <= 1e-2 && eu <= 2e-2, "{ev} {eu}");
    }

    #[test]
    fn hjb_error_shrinks_under_refinement() {
        // control spacing refined with Δx so the control-grid error shrinks too
        let coarse = lq_errors(0.1, 0.5, ControlSet::new(-4.0, 4.0, 61).unwrap()).0;
        let fine = lq_errors(0.05, 0.5, ControlSet::new(-4.0, 4.0, 121).unwrap()).0;
        assert!(coarse / fine >= 1.7, "{coarse} {fine}");
    }

    #[test]
    fn control_from_value_matches_solver_and_oracle() {
        let lq = LqProblem::default();
        let problem = lq.control_problem(ControlSet::new(-4.0, 4.0, 161).unwrap());
        let grid = Grid1D::with_stable_steps(-3.0, 3.0, 61, 0.0, 1.0, 1.0, 4.0).unwrap();
        let (v, u) = solve_hjb_backward(&problem, &grid, None).unwrap();
        assert_eq!(control_from_value(&v, &problem, None), u);

        let exact = GridValueFunction {
            grid,
            values: (0..=grid.nt)
                .map(|n| grid.xs().iter().map(|&x| lq_reference(&lq, grid.time(n), x).0).collect())
                .collect(),
        };
        let from_exact = control_from_value(&exact, &problem, None);
        for i in 0..grid.nx {
            assert!((from_exact.values[0][i] + grid.x(i)).abs() <= 0.025 + 1e-12);
        }

        let flat = GridValueFunction {
            grid,
            values: vec![vec![3.0; grid.nx]; grid.nt + 1],
        };
        // zero derivatives: maximise −½u² alone
        assert!(control_from_value(&flat, &problem, None).values.iter().flatten().all(|u| *u == 0.0));
    }

    #[test]
    fn hamiltonian_is_monotone_in_gamma() {
        let lq = LqProblem { sigma: 0.7, ..LqProblem::default() }.control_problem(ControlSet::default());
        let us = lq.controls.values();
        let mut rng = crate::rng::stream(1, &[]);
        for _ in 0..200 {
            let (x, z, g) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-5.0..5.0));
            let dg = rng.random_range(0.0..2.0);
            let lo = hamiltonian_pointwise(&lq, 0.0, x, z, g, 0.0, &us).0;
            let hi = hamiltonian_pointwise(&lq, 0.0, x, z, g + dg, 0.0, &us).0;
            assert!(hi >= lo);
        }
    }

    fn fp_grid(dx: f64, half_width: f64, t_end: f64, sigma: f64, max_drift: f64) -> Grid1D {
        let nx = (2.0 * half_width / dx).round() as usize + 1;
        Grid1D::with_stable_steps(-half_width, half_width, nx, 0.0, t_end, sigma, 2.0 * max_drift).unwrap()
    }

    #[test]
    fn fp_without_dynamics_is_static() {
        let grid = Grid1D::new(-2.0, 2.0, 41, 0.0, 1.0, 20).unwrap();
        let mu0 = gaussian_density(&grid, 0.3, 0.2).unwrap();
        let drift = vec![vec![0.0; 41]; 21];
        let mu = solve_fp_forward(&mu0, &drift, 0.0, &grid).unwrap();
        assert!(mu.values.iter().all(|row| row == &mu0));
    }

    #[test]
    fn fp_heat_kernel_variance() {
        let grid = fp_grid(0.02, 5.0, 1.0, 1.0, 0.0);
        let mu0 = gaussian_density(&grid, 0.0, 0.25).unwrap();
        let drift = vec![vec![0.0; grid.nx]; grid.nt + 1];
        let mu = solve_fp_forward(&mu0, &drift, 1.0, &grid).unwrap();
        let v0 = mu.variance(0);
        for n in (0..=grid.nt).step_by(grid.nt / 10) {
            let expected = v0 + grid.time(n);
            assert!((mu.variance(n) - expected).abs() / expected <= 1e-3, "{n}");
        }
        assert!(mu.max_mass_error() <= 1e-12);
        assert!(mu.min_value() >= -1e-12);
    }

    #[test]
    fn fp_ou_variance() {
        let grid = fp_grid(0.01, 5.0, 1.0, 1.0, 5.0);
        let mu0 = gaussian_density(&grid, 0.0, 1.0).unwrap();
        let drift = vec![grid.xs().iter().map(|x| -x).collect::<Vec<f64>>(); grid.nt + 1];
        let mu = solve_fp_forward(&mu0, &drift, 1.0, &grid).unwrap();
        for n in (0..=grid.nt).step_by(grid.nt / 20) {
            let t = grid.time(n);
            let expected = 0.5 + 0.5 * (-2.0 * t).exp();
            assert!((mu.variance(n) - expected).abs() / expected <= 2e-2);
        }
        assert!(mu.max_mass_error() <= 1e-8);
    }

    #[test]
    fn fp_input_validation() {
        let grid = Grid1D::new(-1.0, 1.0, 11, 0.0, 1.0, 10).unwrap();
        let drift = vec![vec![0.0; 11]; 11];
        assert!(solve_fp_forward(&[0.1; 11], &drift, 0.1, &grid).is_err());
        let mut bad = gaussian_density(&grid, 0.0, 0.1).unwrap();
        bad[3] = -0.1;
        assert!(solve_fp_forward(&bad, &drift, 0.1, &grid).is_err());
        let fast = vec![vec![100.0; 11]; 11];
        let mu0 = gaussian_density(&grid, 0.0, 0.1).unwrap();
        assert!(matches!(
            solve_fp_forward(&mu0, &fast, 0.1, &grid),
            Err(Error::StabilityViolation { .. })
        ));
    }

    fn mfg_setup(coupling: f64, mean0: f64) -> (ControlProblem, Grid1D, Vec<f64>) {
        let controls = ControlSet::new(-4.0, 4.0, 81).unwrap();
        let problem = LqProblem::default().coupled_problem(coupling, controls);
        let grid = Grid1D::with_stable_steps(-3.0, 3.0, 61, 0.0, 1.0, 1.0, 2.0 * controls.max_abs()).unwrap();
        let mu0 = gaussian_density(&grid, mean0, 0.25).unwrap();
        (problem, grid, mu0)
    }

    #[test]
    fn decoupled_mfg_converges_at_once() {
        let (problem, grid, mu0) = mfg_setup(0.0, 0.8);
        let sol = solve_coupled_mfg(&problem, &mu0, &grid, &MfgConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations(), 1);
        assert_eq!(sol.history[0], 0.0);
        let lq = LqProblem::default().control_problem(problem.controls);
        let (v, u) = solve_hjb_backward(&lq, &grid, None).unwrap();
        assert_eq!(sol.value, v);
        assert_eq!(sol.control, u);
    }

    #[test]
    fn coupled_mfg_contracts() {
        let (problem, grid, mu0) = mfg_setup(0.1, 0.8);
        let sol = solve_coupled_mfg(&problem, &mu0, &grid, &MfgConfig::default()).unwrap();
        assert!(sol.converged, "{:?}", sol.history);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.history);
    }

    #[test]
    fn symmetric_mfg_stays_symmetric() {
        let (problem, grid, mu0) = mfg_setup(0.1, 0.0);
        let sol = solve_coupled_mfg(&problem, &mu0, &grid, &MfgConfig::default()).unwrap();
        for n in 0..=grid.nt {
            assert!(sol.density.mean(n).abs() <= 1e-8);
        }
    }
}
