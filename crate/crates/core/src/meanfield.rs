//! Empirical measures, Wasserstein distances and McKean–Vlasov fixed points.
//!
//! Measure flows are stored as one weighted particle cloud per time node.
//! Every drift used here depends on the population only through its time-`t`
//! marginal, so path-space laws are never materialised.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::sde::{self, ControlSchedule, Diffusion, TimeGrid};
use crate::task::{self, TaskSpec, WeightVector};

const WEIGHT_TOL: f64 = 1e-12;

/// Weighted particle approximation of a probability measure on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    particles: Vec<WeightVector>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(particles: Vec<WeightVector>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("measure", "no particles"));
        }
        if particles.len() != weights.len() {
            return Err(Error::LengthMismatch {
                context: "particles vs weights",
                left: particles.len(),
                right: weights.len(),
            });
        }
        let d = particles[0].dim();
        if particles.iter().any(|p| p.dim() != d) {
            return Err(Error::invalid("measure", "particles of different dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("measure", "negative weight"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid("measure", format!("weights sum to {total}")));
        }
        Ok(EmpiricalMeasure { particles, weights })
    }

    /// Uniform weights `1/p` on the given states.
    pub fn uniform(particles: Vec<WeightVector>) -> Result<Self> {
        let p = particles.len();
        if p == 0 {
            return Err(Error::invalid("measure", "no particles"));
        }
        let d = particles[0].dim();
        if particles.iter().any(|x| x.dim() != d) {
            return Err(Error::invalid("measure", "particles of different dimension"));
        }
        Ok(EmpiricalMeasure {
            particles,
            weights: vec![1.0 / p as f64; p],
        })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(values.iter().map(|&v| WeightVector::new(vec![v])).collect())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    pub fn particles(&self) -> &[WeightVector] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| *w == w0)
    }

    pub fn mean(&self) -> WeightVector {
        let mut m = WeightVector::zeros(self.dim());
        for (x, w) in self.particles.iter().zip(&self.weights) {
            m.axpy(*w, x);
        }
        m
    }

    /// Per-coordinate variance under the measure's own weights.
    pub fn variance(&self) -> WeightVector {
        let m = self.mean();
        let mut v = WeightVector::zeros(self.dim());
        for (x, w) in self.particles.iter().zip(&self.weights) {
            for i in 0..x.dim() {
                v[i] += w * (x[i] - m[i]).powi(2);
            }
        }
        v
    }

    /// Scalar image `⟨direction, x⟩` of every particle.
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.particles
            .iter()
            .map(|x| x.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Coordinate `i` of every particle.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.particles.iter().map(|x| x[i]).collect()
    }

    /// Same weights, particles mapped through `f`.
    pub fn map(&self, f: impl Fn(&WeightVector) -> WeightVector) -> EmpiricalMeasure {
        EmpiricalMeasure {
            particles: self.particles.iter().map(f).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Uniform empirical measure of a list of states.
pub fn empirical_measure(states: Vec<WeightVector>) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::uniform(states)
}

fn w1_sorted(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `∫ |F_a − F_b| dx` for arbitrary weights.
fn w1_cdf(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .zip(wa)
        .map(|(&x, &w)| (x, w))
        .chain(b.iter().zip(wb).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|l, r| l.0.total_cmp(&r.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

fn w1_scalar(a: Vec<f64>, wa: &[f64], a_uniform: bool, b: Vec<f64>, wb: &[f64], b_uniform: bool) -> f64 {
    if a_uniform && b_uniform && a.len() == b.len() {
        w1_sorted(a, b)
    } else {
        w1_cdf(&a, wa, &b, wb)
    }
}

/// Exact Wasserstein-1 distance between two scalar measures.
///
/// Equal-count uniform measures use the sorted coupling (mean absolute
/// difference of order statistics); anything else integrates the CDF gap,
/// which is the same quantile coupling for general weights.
pub fn wasserstein1_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::invalid(
            "measure",
            "wasserstein1_1d needs scalar particles; use flow_distance for d > 1",
        ));
    }
    Ok(w1_scalar(
        a.coordinate(0),
        &a.weights,
        a.is_uniform(),
        b.coordinate(0),
        &b.weights,
        b.is_uniform(),
    ))
}

/// Sliced W1: the average of projected W1 distances over the given unit
/// directions.
pub fn sliced_wasserstein1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, directions: &[Vec<f64>]) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "sliced wasserstein",
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (ua, ub) = (a.is_uniform(), b.is_uniform());
    let total: f64 = directions
        .iter()
        .map(|dir| w1_scalar(a.project(dir), &a.weights, ua, b.project(dir), &b.weights, ub))
        .sum();
    Ok(total / directions.len() as f64)
}

/// `count` unit directions in `R^dim` drawn from `seed`.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[0x5_11ce]);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Time-indexed marginals `μ_t` on the nodes of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFlow {
    times: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

/// Flow of client-gradient laws `μ^g_t`; same representation as a state flow.
pub type GradientMeasureFlow = MeasureFlow;

impl MeasureFlow {
    pub fn new(times: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.len() != measures.len() || times.is_empty() {
            return Err(Error::LengthMismatch {
                context: "flow times vs measures",
                left: times.len(),
                right: measures.len(),
            });
        }
        let n = measures[0].len();
        let d = measures[0].dim();
        if measures.iter().any(|m| m.len() != n || m.dim() != d) {
            return Err(Error::invalid("measure flow", "measures must share particle count and dimension"));
        }
        Ok(MeasureFlow { times, measures })
    }

    /// The same measure at every node of `grid`.
    pub fn constant(grid: &TimeGrid, measure: EmpiricalMeasure) -> Self {
        let times = grid.times();
        let measures = vec![measure; times.len()];
        MeasureFlow { times, measures }
    }

    /// Uniform flow from per-path state histories (`paths × nodes`).
    pub fn from_paths(times: Vec<f64>, paths: &[Vec<WeightVector>]) -> Result<Self> {
        let measures = (0..times.len())
            .map(|n| EmpiricalMeasure::uniform(paths.iter().map(|p| p[n].clone()).collect()))
            .collect::<Result<_>>()?;
        Self::new(times, measures)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn at(&self, n: usize) -> &EmpiricalMeasure {
        &self.measures[n]
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.measures.last().expect("non-empty flow")
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    /// Push-forward of every marginal through the gradient of `task`.
    pub fn gradient_flow(&self, task: &TaskSpec) -> Result<GradientMeasureFlow> {
        let measures = self
            .measures
            .iter()
            .map(|m| {
                let grads = m.particles.iter().map(|w| task::grad(w, task)).collect::<Result<_>>()?;
                EmpiricalMeasure::new(grads, m.weights.clone())
            })
            .collect::<Result<_>>()?;
        Ok(MeasureFlow {
            times: self.times.clone(),
            measures,
        })
    }
}

/// `max_t` of the sliced W1 distance between the two flows' marginals.
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow, projections: usize, seed: u64) -> Result<f64> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs()))
    {
        return Err(Error::invalid("flow distance", "time grids differ"));
    }
    if projections == 0 {
        return Err(Error::invalid("projections", "need at least one"));
    }
    let directions = random_directions(a.dim(), projections, seed);
    let per_node: Vec<f64> = a
        .measures
        .par_iter()
        .zip(&b.measures)
        .map(|(x, y)| sliced_wasserstein1(x, y, &directions))
        .collect::<Result<_>>()?;
    Ok(per_node.into_iter().fold(0.0, f64::max))
}

/// Initial law of the representative client.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Point(WeightVector),
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Path `i` starts at particle `i mod len`.
    Particles(Vec<WeightVector>),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(w) => w.dim(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Particles(ps) => ps[0].dim(),
        }
    }

    pub fn sample(&self, path: usize, rng: &mut StreamRng) -> WeightVector {
        match self {
            InitialLaw::Point(w) => w.clone(),
            InitialLaw::Gaussian { mean, std } => WeightVector::new(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
            InitialLaw::Particles(ps) => ps[path % ps.len()].clone(),
        }
    }
}

/// A drift `b(t, w, μ_t)` that sees the population through a vector summary.
pub trait MeanFieldDrift: Sync {
    fn dim(&self) -> usize;
    /// Summary statistic of `μ_t` consumed by [`MeanFieldDrift::drift`].
    fn summarize(&self, t: f64, measure: &EmpiricalMeasure) -> Result<WeightVector>;
    fn drift(&self, t: f64, w: &WeightVector, summary: &WeightVector) -> Result<WeightVector>;
}

/// Representative federated client: `−Λ_t ∇L(w) − mean(μ^g_t)`, where the
/// gradient law is the push-forward of the state law through `∇L`.
#[derive(Clone, Debug)]
pub struct FederatedDrift {
    pub task: TaskSpec,
    pub schedule: ControlSchedule,
}

impl MeanFieldDrift for FederatedDrift {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn summarize(&self, _t: f64, measure: &EmpiricalMeasure) -> Result<WeightVector> {
        let mut m = WeightVector::zeros(self.dim());
        for (x, w) in measure.particles.iter().zip(&measure.weights) {
            m.axpy(*w, &task::grad(x, &self.task)?);
        }
        Ok(m)
    }

    fn drift(&self, t: f64, w: &WeightVector, mean_gradient: &WeightVector) -> Result<WeightVector> {
        let g = task::grad(w, &self.task)?;
        let rates = self.schedule.rates_at(t);
        Ok(WeightVector::new(
            (0..g.dim()).map(|i| -rates[i] * g[i] - mean_gradient[i]).collect(),
        ))
    }
}

/// Mean reversion toward the population mean: `−rate · (w − mean(μ_t))`.
#[derive(Clone, Copy, Debug)]
pub struct MeanReversion {
    pub dim: usize,
    pub rate: f64,
}

impl MeanFieldDrift for MeanReversion {
    fn dim(&self) -> usize {
        self.dim
    }

    fn summarize(&self, _t: f64, measure: &EmpiricalMeasure) -> Result<WeightVector> {
        Ok(measure.mean())
    }

    fn drift(&self, _t: f64, w: &WeightVector, mean: &WeightVector) -> Result<WeightVector> {
        Ok(w.sub(mean).scaled(-self.rate))
    }
}

/// Simulates `paths` representative players against fixed per-node
/// summaries. Path `i` uses the stream `(seed, i)` for both its initial draw
/// and its Brownian increments, so repeated calls share random numbers.
#[allow(clippy::too_many_arguments)]
fn simulate_against(
    drift: &dyn MeanFieldDrift,
    summaries: &[WeightVector],
    initial: &InitialLaw,
    sigma: &Diffusion,
    grid: &TimeGrid,
    seed: u64,
    paths: usize,
) -> Result<Vec<Vec<WeightVector>>> {
    let dt = grid.dt();
    let d = drift.dim();
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, &[i as u64]);
            let mut states = Vec::with_capacity(grid.steps + 1);
            states.push(initial.sample(i, &mut rng));
            for n in 0..grid.steps {
                let t = grid.time(n);
                let fail = |_| Error::PathDivergence { path: i, step: n + 1 };
                let b = drift.drift(t, &states[n], &summaries[n]).map_err(fail)?;
                let noise = sde::brownian_increments(&mut rng, d, dt);
                let next = sde::euler_maruyama_step(&states[n], &b, sigma, dt, &noise).map_err(fail)?;
                states.push(next);
            }
            Ok(states)
        })
        .collect()
}

fn check_dims(drift_dim: usize, initial: &InitialLaw, sigma: &Diffusion) -> Result<()> {
    for (context, actual) in [("initial law", initial.dim()), ("diffusion", sigma.dim())] {
        if actual != drift_dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: drift_dim,
                actual,
            });
        }
    }
    Ok(())
}

/// Simulates i.i.d. representative clients
/// `dw = (−Λ_t ∇L(w) − mean(μ^g_t)) dt + σ dW` against a given gradient flow
/// and returns the empirical flow of their states.
#[allow(clippy::too_many_arguments)]
pub fn representative_dynamics(
    initial: &InitialLaw,
    gradient_flow: &GradientMeasureFlow,
    task: &TaskSpec,
    schedule: &ControlSchedule,
    sigma: &Diffusion,
    grid: &TimeGrid,
    seed: u64,
    paths: usize,
) -> Result<MeasureFlow> {
    grid.validate()?;
    if gradient_flow.times.len() != grid.steps + 1 {
        return Err(Error::invalid("gradient flow", "does not match the time grid"));
    }
    if paths == 0 {
        return Err(Error::invalid("paths", "need at least one"));
    }
    let drift = FederatedDrift {
        task: task.clone(),
        schedule: schedule.clone(),
    };
    check_dims(drift.dim(), initial, sigma)?;
    let summaries: Vec<WeightVector> = gradient_flow.measures.iter().map(|m| m.mean()).collect();
    let states = simulate_against(&drift, &summaries, initial, sigma, grid, seed, paths)?;
    MeasureFlow::from_paths(grid.times(), &states)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardConfig {
    pub paths: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Particle-wise relaxation `β ∈ (0, 1]`; 1 means no damping.
    pub damping: f64,
    pub projections: usize,
    pub seed: u64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            paths: 1000,
            tol: 1e-3,
            max_iters: 30,
            damping: 1.0,
            projections: 8,
            seed: 0,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.paths < 2 {
            return Err(Error::invalid("paths", "need at least two"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping", "must lie in (0, 1]"));
        }
        if self.max_iters == 0 || self.projections == 0 {
            return Err(Error::invalid("picard", "max_iters and projections must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub flow: MeasureFlow,
    /// Flow distance between successive iterates, one entry per iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl PicardResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Damped Picard iteration for the McKean–Vlasov fixed point
/// `μ = Law(X)`, `dX = b(t, X, μ_t) dt + σ dW`.
///
/// The first iterate freezes the initial particles in time. Each iteration
/// re-simulates the same paths (common random numbers) against the previous
/// flow, relaxes particle-wise, and stops once the flow distance falls to
/// `tol`. Non-convergence is reported through `converged`, not an error.
pub fn picard_fixed_point(
    initial: &InitialLaw,
    drift: &dyn MeanFieldDrift,
    sigma: &Diffusion,
    grid: &TimeGrid,
    cfg: &PicardConfig,
) -> Result<PicardResult> {
    cfg.validate()?;
    grid.validate()?;
    check_dims(drift.dim(), initial, sigma)?;
    let times = grid.times();
    let starts: Vec<WeightVector> = (0..cfg.paths)
        .map(|i| initial.sample(i, &mut rng::stream(cfg.seed, &[i as u64])))
        .collect();
    let mut paths: Vec<Vec<WeightVector>> = starts.into_iter().map(|w| vec![w; times.len()]).collect();
    let mut flow = MeasureFlow::from_paths(times.clone(), &paths)?;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let summaries: Vec<WeightVector> = flow
            .measures
            .par_iter()
            .zip(&times)
            .map(|(m, &t)| drift.summarize(t, m))
            .collect::<Result<_>>()?;
        let mut next = simulate_against(drift, &summaries, initial, sigma, grid, cfg.seed, cfg.paths)?;
        if cfg.damping < 1.0 {
            let beta = cfg.damping;
            for (new_path, old_path) in next.iter_mut().zip(&paths) {
                for (new, old) in new_path.iter_mut().zip(old_path) {
                    *new = old.scaled(1.0 - beta).add(&new.scaled(beta));
                }
            }
        }
        let next_flow = MeasureFlow::from_paths(times.clone(), &next)?;
        let distance = flow_distance(&next_flow, &flow, cfg.projections, cfg.seed)?;
        history.push(distance);
        paths = next;
        flow = next_flow;
        if distance <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(PicardResult {
        flow,
        history,
        converged,
    })
}

/// Scalar sampler used by the Glivenko–Cantelli diagnostic.
pub type ScalarSampler = dyn Fn(&mut StreamRng) -> f64 + Sync;

/// `n` draws from `sampler` on the stream `(seed, stream)`.
pub fn sample_measure(sampler: &ScalarSampler, n: usize, seed: u64, stream: u64) -> Result<EmpiricalMeasure> {
    let mut rng = rng::stream(seed, &[stream]);
    let values: Vec<f64> = (0..n).map(|_| sampler(&mut rng)).collect();
    EmpiricalMeasure::from_scalars(&values)
}

/// W1 between a `p`-sample drawn on replicate stream `replicate` and the
/// reference measure.
pub fn gc_replicate_distance(
    p: usize,
    reference: &EmpiricalMeasure,
    sampler: &ScalarSampler,
    seed: u64,
    replicate: usize,
) -> Result<f64> {
    let sample = sample_measure(sampler, p, seed, replicate as u64)?;
    wasserstein1_1d(&sample, reference)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcRow {
    pub p: usize,
    pub median_w1: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median W1 between `p`-sample empirical measures and a reference, for each
/// `p`. Decreasing medians are the diagnostic's pass condition.
pub fn gc_diagnostic(
    p_values: &[usize],
    reference: &EmpiricalMeasure,
    sampler: &ScalarSampler,
    replicates: usize,
    seed: u64,
) -> Result<Vec<GcRow>> {
    if replicates < 5 {
        return Err(Error::invalid("replicates", "need at least five"));
    }
    if p_values.is_empty() || p_values.windows(2).any(|w| w[1] <= w[0]) || p_values[0] == 0 {
        return Err(Error::invalid("p_values", "must be positive and strictly increasing"));
    }
    p_values
        .iter()
        .map(|&p| {
            let distances = (0..replicates)
                .into_par_iter()
                .map(|r| gc_replicate_distance(p, reference, sampler, seed, r))
                .collect::<Result<Vec<f64>>>()?;
            Ok(GcRow {
                p,
                median_w1: median(distances),
            })
        })
        .collect()
}

/// Whether the medians never increase with `p`.
pub fn gc_weakly_decreasing(rows: &[GcRow]) -> bool {
    rows.windows(2).all(|w| w[1].median_w1 <= w[0].median_w1)
}

/// Standard errors of the sample mean and sample variance of `values`.
pub fn moment_standard_errors(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    ((m2 / n).sqrt(), ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::QuadraticTask;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalars(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(v).unwrap()
    }

    #[test]
    fn empirical_measure_examples() {
        let single = empirical_measure(vec![WeightVector::new(vec![3.0])]).unwrap();
        assert_eq!(single.weights(), &[1.0]);
        let four = scalars(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(four.weights(), &[0.25; 4]);
        let doubled = scalars(&[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(doubled.mean(), four.mean());
        assert_eq!(doubled.variance(), four.variance());
        assert!(empirical_measure(vec![]).is_err());
        assert!(EmpiricalMeasure::new(vec![WeightVector::new(vec![0.0])], vec![0.9]).is_err());
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1_1d(&scalars(&[0.0]), &scalars(&[1.0])).unwrap(), 1.0);
        let a = scalars(&[0.3, -1.0, 2.0]);
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&scalars(&[0.0, 2.0]), &scalars(&[1.0, 3.0])).unwrap(), 1.0);
        let two_d = empirical_measure(vec![WeightVector::new(vec![0.0, 1.0])]).unwrap();
        assert!(wasserstein1_1d(&two_d, &two_d).is_err());
    }

    #[test]
    fn w1_general_weights_and_counts() {
        // δ_0 vs ½δ_0 + ½δ_2 moves half the mass a distance 2
        let a = scalars(&[0.0]);
        let b = scalars(&[0.0, 2.0]);
        assert!((wasserstein1_1d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let w = EmpiricalMeasure::new(
            vec![WeightVector::new(vec![0.0]), WeightVector::new(vec![1.0])],
            vec![0.25, 0.75],
        )
        .unwrap();
        assert!((wasserstein1_1d(&w, &scalars(&[1.0])).unwrap() - 0.25).abs() < 1e-15);
        // the CDF route agrees with the sorted coupling on uniform inputs
        let x = [0.1, 0.7, -0.3, 2.0];
        let y = [1.1, -0.2, 0.4, 0.0];
        let sorted = wasserstein1_1d(&scalars(&x), &scalars(&y)).unwrap();
        let cdf = w1_cdf(&x, &[0.25; 4], &y, &[0.25; 4]);
        assert!((sorted - cdf).abs() < 1e-14);
    }

    fn flow_of(grid: &TimeGrid, per_node: impl Fn(usize) -> Vec<f64>) -> MeasureFlow {
        let measures = (0..=grid.steps).map(|n| scalars(&per_node(n))).collect();
        MeasureFlow::new(grid.times(), measures).unwrap()
    }

    #[test]
    fn flow_distance_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let a = flow_of(&grid, |n| vec![n as f64, 1.0 + n as f64 * 0.5]);
        assert_eq!(flow_distance(&a, &a, 4, 1).unwrap(), 0.0);

        let b = flow_of(&grid, |n| if n == 4 { vec![5.0, 4.0] } else { vec![n as f64, 1.0 + n as f64 * 0.5] });
        let d1 = flow_distance(&a, &b, 3, 1).unwrap();
        assert_eq!(d1, 1.0);

        // d = 1: seed-independent and equal to the max-over-time W1
        let c = flow_of(&grid, |n| vec![0.3 * n as f64, -1.0, 2.0 * n as f64]);
        let e = flow_of(&grid, |n| vec![0.1, n as f64, 0.5]);
        let direct = (0..=4)
            .map(|n| wasserstein1_1d(c.at(n), e.at(n)).unwrap())
            .fold(0.0, f64::max);
        for seed in [0, 1, 99] {
            assert!((flow_distance(&c, &e, 5, seed).unwrap() - direct).abs() < 1e-14);
        }
        let short = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert!(flow_distance(&a, &flow_of(&short, |_| vec![0.0, 0.0]), 1, 0).is_err());
    }

    #[test]
    fn flow_distance_is_symmetric_in_2d() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let mk = |shift: f64| {
            let measures = (0..=2)
                .map(|n| {
                    EmpiricalMeasure::uniform(vec![
                        WeightVector::new(vec![n as f64, shift]),
                        WeightVector::new(vec![-1.0, 2.0 * shift]),
                    ])
                    .unwrap()
                })
                .collect();
            MeasureFlow::new(grid.times(), measures).unwrap()
        };
        let (a, b) = (mk(0.0), mk(1.0));
        assert_eq!(flow_distance(&a, &b, 16, 3).unwrap(), flow_distance(&b, &a, 16, 3).unwrap());
        assert!(flow_distance(&a, &b, 16, 3).unwrap() > 0.0);
    }

    fn scalar_task(theta: f64, curvature: f64) -> TaskSpec {
        QuadraticTask::isotropic(vec![theta], curvature).unwrap().into()
    }

    #[test]
    fn representative_without_forcing() {
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let zero = MeasureFlow::constant(&grid, scalars(&[0.0]));
        let task = scalar_task(0.0, 1.0);
        let frozen = ControlSchedule::constant(0.0, 1.0, vec![0.0], 1.0).unwrap();
        let still = representative_dynamics(
            &InitialLaw::Point(WeightVector::new(vec![0.4])),
            &zero,
            &task,
            &frozen,
            &Diffusion::scalar(1, 0.0).unwrap(),
            &grid,
            0,
            5,
        )
        .unwrap();
        assert!(still.measures().iter().all(|m| m.particles().iter().all(|w| w[0] == 0.4)));

        // with δ_0 forcing the representative reduces to the controlled SDE
        let schedule = ControlSchedule::constant(0.0, 1.0, vec![1.0], 1.0).unwrap();
        let sigma = Diffusion::scalar(1, 0.3).unwrap();
        let w0 = WeightVector::new(vec![1.0]);
        let rep = representative_dynamics(&InitialLaw::Point(w0.clone()), &zero, &task, &schedule, &sigma, &grid, 7, 3).unwrap();
        for p in 0..3 {
            let path = sde::integrate_path(&w0, &task, &sde::DriftKind::LinearControlled, &schedule, &sigma, &grid, 7, p).unwrap();
            for n in 0..=grid.steps {
                assert_eq!(rep.at(n).particles()[p], path.states[n]);
            }
        }
    }

    #[test]
    fn representative_settles_at_forced_stationary_point() {
        let (theta, lambda, c) = (1.0, 2.0, 0.5);
        let grid = TimeGrid::new(0.0, 20.0, 4000).unwrap();
        let forcing = MeasureFlow::constant(&grid, scalars(&[c]));
        let rep = representative_dynamics(
            &InitialLaw::Point(WeightVector::new(vec![-3.0])),
            &forcing,
            &scalar_task(theta, 1.0),
            &ControlSchedule::constant(0.0, 20.0, vec![lambda], 5.0).unwrap(),
            &Diffusion::scalar(1, 0.0).unwrap(),
            &grid,
            0,
            2,
        )
        .unwrap();
        let w_t = rep.terminal().particles()[0][0];
        assert!((w_t - (theta - c / lambda)).abs() < 1e-9, "{w_t}");
    }

    #[test]
    fn picard_stationary_initialisations() {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let cfg = PicardConfig { paths: 10, ..PicardConfig::default() };
        let drift = FederatedDrift {
            task: scalar_task(2.0, 1.0),
            schedule: ControlSchedule::constant(0.0, 1.0, vec![0.7], 1.0).unwrap(),
        };
        let zero = Diffusion::scalar(1, 0.0).unwrap();
        let res = picard_fixed_point(&InitialLaw::Point(WeightVector::new(vec![2.0])), &drift, &zero, &grid, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations(), 1);
        assert_eq!(res.history, vec![0.0]);

        let mr = MeanReversion { dim: 1, rate: 1.0 };
        let res = picard_fixed_point(&InitialLaw::Point(WeightVector::new(vec![0.8])), &mr, &zero, &grid, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.flow.measures().iter().all(|m| m.particles().iter().all(|w| w[0] == 0.8)));
    }

    #[test]
    fn picard_non_convergence_is_flagged() {
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let cfg = PicardConfig { paths: 20, max_iters: 2, tol: 1e-14, ..PicardConfig::default() };
        let mr = MeanReversion { dim: 1, rate: 1.0 };
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let res = picard_fixed_point(&init, &mr, &Diffusion::scalar(1, 0.5).unwrap(), &grid, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.history.len(), 2);
        assert!(res.history.iter().all(|d| d.is_finite()));
        assert!(picard_fixed_point(&init, &mr, &Diffusion::scalar(1, 0.5).unwrap(), &grid, &PicardConfig { damping: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn picard_history_decreases_for_mean_reversion() {
        let grid = TimeGrid::new(0.0, 2.0, 100).unwrap();
        let cfg = PicardConfig { paths: 200, tol: 1e-10, max_iters: 8, ..PicardConfig::default() };
        let mr = MeanReversion { dim: 1, rate: 1.0 };
        let init = InitialLaw::Gaussian { mean: vec![1.0], std: vec![1.0] };
        let res = picard_fixed_point(&init, &mr, &Diffusion::scalar(1, 0.5).unwrap(), &grid, &cfg).unwrap();
        assert!(res.history[1..].windows(2).all(|w| w[1] <= w[0]), "{:?}", res.history);
    }

    #[test]
    fn gc_degenerate_and_identical_samples() {
        let constant = |_: &mut StreamRng| 2.5;
        let reference = sample_measure(&constant, 100, 0, 0).unwrap();
        let rows = gc_diagnostic(&[1, 10, 50], &reference, &constant, 5, 3).unwrap();
        assert!(rows.iter().all(|r| r.median_w1 == 0.0));

        let normal = |r: &mut StreamRng| r.sample::<f64, _>(StandardNormal);
        let reference = sample_measure(&normal, 64, 11, 0).unwrap();
        assert_eq!(gc_replicate_distance(64, &reference, &normal, 11, 0).unwrap(), 0.0);
        assert!(gc_replicate_distance(64, &reference, &normal, 11, 1).unwrap() > 0.0);
        assert!(gc_diagnostic(&[10, 5], &reference, &normal, 5, 0).is_err());
        assert!(gc_diagnostic(&[10], &reference, &normal, 4, 0).is_err());
    }

    #[test]
    fn moment_errors_of_constant_sample_vanish() {
        assert_eq!(moment_standard_errors(&[1.0; 10]), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn w1_metric_axioms(
            a in proptest::collection::vec(-10.0f64..10.0, 1..64),
            seed in 0u64..1000,
        ) {
            let n = a.len();
            let mut rng = rng::stream(seed, &[]);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (ma, mb, mc) = (scalars(&a), scalars(&b), scalars(&c));
            let ab = wasserstein1_1d(&ma, &mb).unwrap();
            let ba = wasserstein1_1d(&mb, &ma).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-10);
            prop_assert_eq!(wasserstein1_1d(&ma, &ma).unwrap(), 0.0);
            if a.iter().zip(&b).any(|(x, y)| x != y) {
                let mut sa = a.clone();
                let mut sb = b.clone();
                sa.sort_by(f64::total_cmp);
                sb.sort_by(f64::total_cmp);
                prop_assert_eq!(ab == 0.0, sa == sb);
            }
            let ac = wasserstein1_1d(&ma, &mc).unwrap();
            let cb = wasserstein1_1d(&mc, &mb).unwrap();
            prop_assert!(ab <= ac + cb + 1e-10);
        }

        #[test]
        fn w1_translation_equivariance(
            a in proptest::collection::vec(-1000i32..1000, 1..32),
            b_seed in 0u64..1000,
            shift in -1000i32..1000,
        ) {
            // integer-valued particles keep every operation exact
            let mut rng = rng::stream(b_seed, &[]);
            let b: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1000..1000) as f64).collect();
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let c = f64::from(shift);
            let base = wasserstein1_1d(&scalars(&a), &scalars(&b)).unwrap();
            let shifted_a: Vec<f64> = a.iter().map(|x| x + c).collect();
            let shifted_b: Vec<f64> = b.iter().map(|x| x + c).collect();
            let moved = wasserstein1_1d(&scalars(&shifted_a), &scalars(&shifted_b)).unwrap();
            prop_assert_eq!(base, moved);
        }
    }
}
