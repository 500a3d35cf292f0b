//! Monte-Carlo payoffs and equilibrium deviation checks.
//!
//! Payoffs are rewards to be maximised: `J = E[∫ f(t, X_t, u_t) dt + g(X_T)]`,
//! with the running term integrated by the trapezoidal rule along each
//! Euler–Maruyama path. Path `i` always draws from stream `(seed, i)`, so
//! estimates that share a seed use common random numbers.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{ControlGrid, GridValueFunction};
use crate::error::{Error, Result};
use crate::meanfield::MeasureFlow;
use crate::rng;
use crate::sde::{brownian_increments, euler_maruyama_step, ControlSchedule, Diffusion, TimeGrid};
use crate::task::{self, MixtureWeights, TaskSpec, WeightVector};

/// A (possibly feedback) control `u(t, x)`.
pub trait Strategy: Sync {
    fn control(&self, t: f64, x: &WeightVector) -> WeightVector;
}

impl Strategy for ControlSchedule {
    fn control(&self, t: f64, _x: &WeightVector) -> WeightVector {
        WeightVector::new(self.rates_at(t).to_vec())
    }
}

/// Feedback strategy given by a closure.
#[derive(Clone)]
pub struct Feedback(pub FeedbackFn);

pub type FeedbackFn = Arc<dyn Fn(f64, &WeightVector) -> WeightVector + Send + Sync>;

impl Feedback {
    pub fn new(f: impl Fn(f64, &WeightVector) -> WeightVector + Send + Sync + 'static) -> Self {
        Feedback(Arc::new(f))
    }

    /// Scalar linear feedback `u = gain · x + offset`.
    pub fn linear(gain: f64, offset: f64) -> Self {
        Feedback::new(move |_, x| WeightVector::new(vec![gain * x[0] + offset]))
    }
}

impl Strategy for Feedback {
    fn control(&self, t: f64, x: &WeightVector) -> WeightVector {
        (self.0)(t, x)
    }
}

/// Scalar feedback read off a solver control grid.
#[derive(Clone, Debug)]
pub struct GridPolicy(pub ControlGrid);

impl Strategy for GridPolicy {
    fn control(&self, t: f64, x: &WeightVector) -> WeightVector {
        WeightVector::new(vec![self.0.at(t, x[0])])
    }
}

/// Componentwise admissible range of controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControlBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ControlBounds {
    pub fn of_schedule(schedule: &ControlSchedule) -> Self {
        ControlBounds {
            lo: 0.0,
            hi: schedule.max_rate(),
        }
    }
}

/// Deviation families applied on top of a base strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    /// `u + δ` throughout.
    Offset { delta: Vec<f64> },
    /// `u + δ` on `[start, end)` only.
    Bump { start: f64, end: f64, delta: Vec<f64> },
    /// `factor · u`.
    Scale { factor: f64 },
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation::Scale { factor: 1.0 }
    }

    pub fn label(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
        match self {
            Perturbation::Offset { delta } => format!("offset({})", list(delta)),
            Perturbation::Bump { start, end, delta } => format!("bump[{start:.3};{end:.3})({})", list(delta)),
            Perturbation::Scale { factor } => format!("scale({factor:.3})"),
        }
    }

    fn apply(&self, t: f64, u: WeightVector) -> WeightVector {
        match self {
            Perturbation::Offset { delta } => add_delta(u, delta),
            Perturbation::Bump { start, end, delta } if t >= *start && t < *end => add_delta(u, delta),
            Perturbation::Bump { .. } => u,
            Perturbation::Scale { factor } => u.scaled(*factor),
        }
    }
}

fn add_delta(u: WeightVector, delta: &[f64]) -> WeightVector {
    let d = u.dim();
    WeightVector::new((0..d).map(|i| u[i] + delta[i % delta.len()]).collect())
}

/// `base` with a perturbation applied, then clipped to `bounds`.
pub struct Perturbed<'a> {
    pub base: &'a dyn Strategy,
    pub perturbation: Perturbation,
    pub bounds: ControlBounds,
}

impl Strategy for Perturbed<'_> {
    fn control(&self, t: f64, x: &WeightVector) -> WeightVector {
        let u = self.perturbation.apply(t, self.base.control(t, x));
        WeightVector::new(u.iter().map(|v| v.clamp(self.bounds.lo, self.bounds.hi)).collect())
    }
}

/// Draws `count` bounded deviations, cycling through the three families.
pub fn random_perturbations(count: usize, dim: usize, magnitude: f64, horizon: (f64, f64), seed: u64) -> Vec<Perturbation> {
    let mut rng = rng::stream(seed, &[0x7065_7274]);
    (0..count)
        .map(|k| {
            let mut delta = || (0..dim).map(|_| rng.random_range(-magnitude..=magnitude)).collect::<Vec<f64>>();
            match k % 3 {
                0 => Perturbation::Offset { delta: delta() },
                1 => {
                    let d = delta();
                    let a = rng.random_range(horizon.0..horizon.1);
                    let b = rng.random_range(horizon.0..horizon.1);
                    Perturbation::Bump {
                        start: a.min(b),
                        end: a.max(b),
                        delta: d,
                    }
                }
                _ => Perturbation::Scale {
                    factor: 1.0 + rng.random_range(-magnitude..=magnitude),
                },
            }
        })
        .collect()
}

type DriftFn = Arc<dyn Fn(f64, &WeightVector, &WeightVector) -> Result<WeightVector> + Send + Sync>;

/// Controlled state dynamics `dX = b(t, X, u) dt + σ dW`, with any population
/// dependence frozen inside `b`.
#[derive(Clone)]
pub struct Dynamics {
    drift: DriftFn,
    pub sigma: Diffusion,
}

impl Dynamics {
    pub fn new(
        sigma: Diffusion,
        drift: impl Fn(f64, &WeightVector, &WeightVector) -> Result<WeightVector> + Send + Sync + 'static,
    ) -> Self {
        Dynamics {
            drift: Arc::new(drift),
            sigma,
        }
    }

    /// Scalar `dX = u dt + σ dW`.
    pub fn lq(sigma: f64) -> Result<Self> {
        Ok(Dynamics::new(Diffusion::scalar(1, sigma)?, |_, _, u| Ok(u.clone())))
    }

    /// Representative federated client facing a frozen population:
    /// `b = −u ∘ ∇L(w) − mean(∇L # μ_t)`, where the control `u` is the rate
    /// vector `Λ_t` and `μ_t` is read from `population` at the latest slice
    /// not after `t`.
    pub fn federated(task: TaskSpec, population: &MeasureFlow, sigma: Diffusion) -> Result<Self> {
        let gradients = population.gradient_flow(&task)?;
        let times = gradients.times().to_vec();
        let means: Vec<WeightVector> = gradients.measures().iter().map(|m| m.mean()).collect();
        Ok(Dynamics::new(sigma, move |t, w, u| {
            let n = times.partition_point(|s| *s <= t + 1e-12).saturating_sub(1);
            let g = task::grad(w, &task)?;
            Ok(WeightVector::new(
                (0..g.dim()).map(|i| -u[i] * g[i] - means[n][i]).collect(),
            ))
        }))
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }
}

type RunningFn = Arc<dyn Fn(f64, &WeightVector, &WeightVector) -> f64 + Send + Sync>;
type TerminalFn = Arc<dyn Fn(&WeightVector) -> f64 + Send + Sync>;

/// Reward specification. Cost-style presets are negated on construction.
#[derive(Clone)]
pub enum CostSpec {
    /// Running cost `L*(w)`, the mixture risk of the state; no terminal term.
    ServerRisk { tasks: Vec<TaskSpec>, alpha: MixtureWeights },
    /// Constant running cost `c` and terminal cost `L*(w_T)`.
    TerminalOnly {
        tasks: Vec<TaskSpec>,
        alpha: MixtureWeights,
        c: f64,
    },
    /// Costs `½(x² + u²)` and terminal `½ q_T x²`.
    Lq { q_terminal: f64 },
    /// Rewards given directly.
    Custom { running: RunningFn, terminal: TerminalFn },
}

impl CostSpec {
    pub fn custom(
        running: impl Fn(f64, &WeightVector, &WeightVector) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(&WeightVector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CostSpec::Custom {
            running: Arc::new(running),
            terminal: Arc::new(terminal),
        }
    }

    pub fn zero() -> Self {
        CostSpec::custom(|_, _, _| 0.0, |_| 0.0)
    }

    pub fn running(&self, t: f64, x: &WeightVector, u: &WeightVector) -> Result<f64> {
        Ok(match self {
            CostSpec::ServerRisk { tasks, alpha } => -task::mixture_risk(x, tasks, alpha)?,
            CostSpec::TerminalOnly { c, .. } => -c,
            CostSpec::Lq { .. } => -0.5 * (x.dot(x) + u.dot(u)),
            CostSpec::Custom { running, .. } => running(t, x, u),
        })
    }

    pub fn terminal(&self, x: &WeightVector) -> Result<f64> {
        Ok(match self {
            CostSpec::ServerRisk { .. } => 0.0,
            CostSpec::TerminalOnly { tasks, alpha, .. } => -task::mixture_risk(x, tasks, alpha)?,
            CostSpec::Lq { q_terminal } => -0.5 * q_terminal * x.dot(x),
            CostSpec::Custom { terminal, .. } => terminal(x),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub seed: u64,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn simulate_payoff(
    path: usize,
    x0: &WeightVector,
    strategy: &dyn Strategy,
    dynamics: &Dynamics,
    cost: &CostSpec,
    grid: &TimeGrid,
    seed: u64,
) -> Result<f64> {
    let diverged = |step: usize| Error::PathDivergence { path, step };
    let mut rng = rng::stream(seed, &[path as u64]);
    let dt = grid.dt();
    let mut x = x0.clone();
    let mut u = strategy.control(grid.t0, &x);
    let mut f_prev = cost.running(grid.t0, &x, &u)?;
    let mut integral = 0.0;
    for n in 0..grid.steps {
        let t = grid.time(n);
        let b = (dynamics.drift)(t, &x, &u)?;
        let noise = brownian_increments(&mut rng, x.dim(), dt);
        x = euler_maruyama_step(&x, &b, &dynamics.sigma, dt, &noise).map_err(|e| match e {
            Error::SdeDivergence { .. } => diverged(n + 1),
            other => other,
        })?;
        let t_next = grid.time(n + 1);
        u = strategy.control(t_next, &x);
        let f_next = cost.running(t_next, &x, &u)?;
        integral += 0.5 * dt * (f_prev + f_next);
        f_prev = f_next;
    }
    let payoff = integral + cost.terminal(&x)?;
    if !payoff.is_finite() {
        return Err(diverged(grid.steps));
    }
    Ok(payoff)
}

fn payoff_samples(
    x0: &WeightVector,
    strategy: &dyn Strategy,
    dynamics: &Dynamics,
    cost: &CostSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if paths < 2 {
        return Err(Error::invalid("paths", "need at least two paths"));
    }
    grid.validate()?;
    if x0.dim() != dynamics.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: dynamics.dim(),
            actual: x0.dim(),
        });
    }
    (0..paths)
        .into_par_iter()
        .map(|i| simulate_payoff(i, x0, strategy, dynamics, cost, grid, seed))
        .collect()
}

/// Monte-Carlo estimate of the expected payoff of `strategy` from `x0`.
pub fn estimate_payoff(
    x0: &WeightVector,
    strategy: &dyn Strategy,
    dynamics: &Dynamics,
    cost: &CostSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    let samples = payoff_samples(x0, strategy, dynamics, cost, grid, paths, seed)?;
    let (mean, stderr) = mean_and_stderr(&samples);
    Ok(PayoffEstimate { mean, stderr, paths, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationReport {
    pub baseline: PayoffEstimate,
    pub labels: Vec<String>,
    pub perturbed: Vec<PayoffEstimate>,
    /// `J(perturbed) − J(baseline)` per deviation.
    pub gaps: Vec<f64>,
    /// Standard error of the paired path-wise differences.
    pub gap_stderr: Vec<f64>,
}

impl DeviationReport {
    /// Whether every gap is at most `k` standard errors above zero.
    pub fn no_profitable_deviation(&self, k: f64) -> bool {
        self.gaps.iter().zip(&self.gap_stderr).all(|(g, s)| *g <= k * s)
    }
}

/// Payoff gaps of unilateral deviations from `equilibrium`, all simulated
/// with common random numbers against the same frozen dynamics. The
/// baseline is clipped to `bounds` like every deviation.
#[allow(clippy::too_many_arguments)]
pub fn nash_deviation_gap(
    x0: &WeightVector,
    equilibrium: &dyn Strategy,
    bounds: ControlBounds,
    perturbations: &[Perturbation],
    dynamics: &Dynamics,
    cost: &CostSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<DeviationReport> {
    let clipped = |p: &Perturbation| Perturbed {
        base: equilibrium,
        perturbation: p.clone(),
        bounds,
    };
    let base = payoff_samples(x0, &clipped(&Perturbation::none()), dynamics, cost, grid, paths, seed)?;
    let (mean, stderr) = mean_and_stderr(&base);
    let mut report = DeviationReport {
        baseline: PayoffEstimate { mean, stderr, paths, seed },
        labels: Vec::new(),
        perturbed: Vec::new(),
        gaps: Vec::new(),
        gap_stderr: Vec::new(),
    };
    for p in perturbations {
        let samples = payoff_samples(x0, &clipped(p), dynamics, cost, grid, paths, seed)?;
        let (mean, stderr) = mean_and_stderr(&samples);
        let diffs: Vec<f64> = samples.iter().zip(&base).map(|(a, b)| a - b).collect();
        let (gap, gap_se) = mean_and_stderr(&diffs);
        report.labels.push(p.label());
        report.perturbed.push(PayoffEstimate { mean, stderr, paths, seed });
        report.gaps.push(gap);
        report.gap_stderr.push(gap_se);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub value_at_x0: f64,
    pub estimate: PayoffEstimate,
    pub allowance: f64,
    pub agrees: bool,
}

/// Compares the grid value `v(0, x0)` with the simulated payoff of
/// `policy`; agreement means `|v − mean| ≤ 4·stderr + allowance`.
#[allow(clippy::too_many_arguments)]
pub fn verification_check(
    value: &GridValueFunction,
    x0: f64,
    policy: &dyn Strategy,
    dynamics: &Dynamics,
    cost: &CostSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    allowance: f64,
) -> Result<VerificationReport> {
    let value_at_x0 = value.at(0, x0);
    let estimate = estimate_payoff(&WeightVector::new(vec![x0]), policy, dynamics, cost, grid, paths, seed)?;
    let agrees = (value_at_x0 - estimate.mean).abs() <= 4.0 * estimate.stderr + allowance;
    Ok(VerificationReport {
        value_at_x0,
        estimate,
        allowance,
        agrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{solve_hjb_backward, ControlSet, Grid1D, LqProblem};
    use crate::meanfield::{EmpiricalMeasure, MeasureFlow};
    use crate::task::QuadraticTask;
    use proptest::prelude::*;
    use super::Strategy;

    fn origin() -> WeightVector {
        WeightVector::new(vec![0.0])
    }

    fn unit_grid(steps: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, steps).unwrap()
    }

    fn lq_bounds() -> ControlBounds {
        ControlBounds { lo: -4.0, hi: 4.0 }
    }

    #[test]
    fn trivial_payoffs() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let zero = estimate_payoff(&origin(), &Feedback::linear(-1.0, 0.0), &dynamics, &CostSpec::zero(), &unit_grid(50), 100, 3).unwrap();
        assert_eq!((zero.mean, zero.stderr), (0.0, 0.0));
        let one = CostSpec::custom(|_, _, _| 1.0, |_| 0.0);
        let est = estimate_payoff(&origin(), &Feedback::linear(-1.0, 0.0), &dynamics, &one, &unit_grid(50), 100, 3).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-12 && est.stderr < 1e-12);
        assert!(estimate_payoff(&origin(), &Feedback::linear(0.0, 0.0), &dynamics, &one, &unit_grid(5), 1, 3).is_err());
    }

    #[test]
    fn lq_optimal_payoff() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let est = estimate_payoff(&origin(), &Feedback::linear(-1.0, 0.0), &dynamics, &CostSpec::Lq { q_terminal: 1.0 }, &unit_grid(500), 10_000, 11).unwrap();
        assert!((est.mean + 0.5).abs() <= 4.0 * est.stderr + 5e-3, "{est:?}");
    }

    #[test]
    fn crn_identity_and_zero_gap() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let cost = CostSpec::Lq { q_terminal: 1.0 };
        let eq = Feedback::linear(-1.0, 0.0);
        let a = estimate_payoff(&origin(), &eq, &dynamics, &cost, &unit_grid(100), 500, 5).unwrap();
        let b = estimate_payoff(&origin(), &eq, &dynamics, &cost, &unit_grid(100), 500, 5).unwrap();
        assert_eq!(a, b);
        let zero = [Perturbation::Offset { delta: vec![0.0] }, Perturbation::none()];
        let r = nash_deviation_gap(&origin(), &eq, lq_bounds(), &zero, &dynamics, &cost, &unit_grid(100), 500, 5).unwrap();
        assert_eq!(r.gaps, vec![0.0, 0.0]);
        assert_eq!(r.perturbed[0].mean, r.baseline.mean);
    }

    #[test]
    fn offset_deviation_is_strictly_worse() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let cost = CostSpec::Lq { q_terminal: 1.0 };
        let eq = Feedback::linear(-1.0, 0.0);
        let r = nash_deviation_gap(&origin(), &eq, lq_bounds(), &[Perturbation::Offset { delta: vec![0.5] }], &dynamics, &cost, &unit_grid(200), 4000, 9).unwrap();
        assert!(r.gaps[0] + 4.0 * r.gap_stderr[0] < 0.0);
        // J(u) − J(u*) = −½ ∫ E(u − u*)² dt = −0.125
        assert!((r.gaps[0] + 0.125).abs() < 0.01, "{:?}", r.gaps);
    }

    #[test]
    fn random_deviations_do_not_pay() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let cost = CostSpec::Lq { q_terminal: 1.0 };
        let eq = Feedback::linear(-1.0, 0.0);
        let perturbations = random_perturbations(20, 1, 1.0, (0.0, 1.0), 4);
        let r = nash_deviation_gap(&origin(), &eq, lq_bounds(), &perturbations, &dynamics, &cost, &unit_grid(100), 2000, 8).unwrap();
        assert_eq!(r.gaps.len(), 20);
        assert!(r.no_profitable_deviation(4.0), "{:?}", r.gaps);
    }

    #[test]
    fn stderr_halves_when_paths_quadruple() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let cost = CostSpec::Lq { q_terminal: 1.0 };
        let eq = Feedback::linear(-1.0, 0.0);
        let a = estimate_payoff(&origin(), &eq, &dynamics, &cost, &unit_grid(50), 1000, 2).unwrap();
        let b = estimate_payoff(&origin(), &eq, &dynamics, &cost, &unit_grid(50), 4000, 2).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "{ratio}");
    }

    fn lq_value() -> GridValueFunction {
        let problem = LqProblem::default().control_problem(ControlSet::new(-4.0, 4.0, 161).unwrap());
        let grid = Grid1D::with_stable_steps(-3.0, 3.0, 121, 0.0, 1.0, 1.0, 4.0).unwrap();
        solve_hjb_backward(&problem, &grid, None).unwrap().0
    }

    #[test]
    fn verification_examples() {
        let dynamics = Dynamics::lq(1.0).unwrap();
        let cost = CostSpec::Lq { q_terminal: 1.0 };
        let v = lq_value();
        let ok = verification_check(&v, 0.0, &Feedback::linear(-1.0, 0.0), &dynamics, &cost, &unit_grid(500), 10_000, 1, 2e-2).unwrap();
        assert!(ok.agrees, "{ok:?}");
        // u = 0: E x_t² = t, so J = −¼ − ½ = −0.75
        let lazy = verification_check(&v, 0.0, &Feedback::linear(0.0, 0.0), &dynamics, &cost, &unit_grid(500), 10_000, 1, 2e-2).unwrap();
        assert!(!lazy.agrees && lazy.estimate.mean < lazy.value_at_x0);
        assert!((lazy.estimate.mean + 0.75).abs() < 4.0 * lazy.estimate.stderr + 5e-3);

        let g = Grid1D::new(-1.0, 1.0, 11, 0.0, 1.0, 10).unwrap();
        let flat = GridValueFunction { grid: g, values: vec![vec![0.0; 11]; 11] };
        let trivial = verification_check(&flat, 0.0, &Feedback::linear(0.0, 0.0), &dynamics, &CostSpec::zero(), &unit_grid(10), 10, 1, 0.0).unwrap();
        assert!(trivial.agrees);
    }

    #[test]
    fn grid_policy_reproduces_feedback() {
        let problem = LqProblem::default().control_problem(ControlSet::new(-4.0, 4.0, 161).unwrap());
        let grid = Grid1D::with_stable_steps(-3.0, 3.0, 121, 0.0, 1.0, 1.0, 4.0).unwrap();
        let (_, u) = solve_hjb_backward(&problem, &grid, None).unwrap();
        let policy = GridPolicy(u);
        for x in [-1.5, -0.25, 0.0, 0.75] {
            assert!((policy.control(0.5, &WeightVector::new(vec![x]))[0] + x).abs() < 1e-9);
        }
    }

    #[test]
    fn federated_dynamics_and_presets() {
        let task = TaskSpec::from(QuadraticTask::isotropic(vec![1.0, -1.0], 1.0).unwrap());
        let grid = unit_grid(100);
        let pop = MeasureFlow::constant(&grid, EmpiricalMeasure::uniform(vec![WeightVector::new(vec![1.0, -1.0])]).unwrap());
        let dynamics = Dynamics::federated(task.clone(), &pop, Diffusion::scalar(2, 0.0).unwrap()).unwrap();
        let tasks = vec![task];
        let alpha = MixtureWeights::uniform(1).unwrap();
        let schedule = ControlSchedule::constant(0.0, 1.0, vec![1.0, 1.0], 2.0).unwrap();
        let start = WeightVector::new(vec![1.0, -1.0]);
        let at_opt = estimate_payoff(&start, &schedule, &dynamics, &CostSpec::ServerRisk { tasks: tasks.clone(), alpha: alpha.clone() }, &grid, 2, 0).unwrap();
        assert_eq!(at_opt.mean, 0.0);
        let c = CostSpec::TerminalOnly { tasks, alpha, c: 0.25 };
        let far = estimate_payoff(&WeightVector::new(vec![3.0, -1.0]), &schedule, &dynamics, &c, &grid, 2, 0).unwrap();
        // risk decays like ½·4·e^{−2T}
        assert!((far.mean - (-0.25 - 2.0 * (-2.0f64).exp())).abs() < 2e-2, "{far:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn optimal_policy_dominates(gain in -2.0f64..0.0, offset in -1.0f64..1.0) {
            let dynamics = Dynamics::lq(1.0).unwrap();
            let cost = CostSpec::Lq { q_terminal: 1.0 };
            let eq = Feedback::linear(-1.0, 0.0);
            let other = Feedback::linear(gain, offset);
            let grid = unit_grid(50);
            let a = payoff_samples(&origin(), &eq, &dynamics, &cost, &grid, 400, 6).unwrap();
            let b = payoff_samples(&origin(), &other, &dynamics, &cost, &grid, 400, 6).unwrap();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let (gap, se) = mean_and_stderr(&diffs);
            prop_assert!(gap >= -4.0 * se);
        }
    }
}
