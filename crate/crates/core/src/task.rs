//! Synthetic client learning tasks.
//!
//! Two families are supported. [`QuadraticTask`] has the closed-form risk
//! `½ (w − θ)ᵀ A (w − θ)` and gives exact oracles for everything built on top
//! of it. [`LogisticTask`] is softmax regression on a fixed dataset drawn from
//! class-conditional Gaussians; its risk and gradient are empirical averages
//! of the cross-entropy loss.

use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A point in parameter space: client weights, server weights or game state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        WeightVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        WeightVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        WeightVector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &WeightVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> WeightVector {
        WeightVector(self.0.iter().map(|v| v * scale).collect())
    }

    pub fn sub(&self, other: &WeightVector) -> WeightVector {
        WeightVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &WeightVector) -> WeightVector {
        WeightVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn dot(&self, other: &WeightVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &WeightVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(values: Vec<f64>) -> Self {
        WeightVector(values)
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for WeightVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Scale-free error used by every finite-difference check:
/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_psd(name: &'static str, matrix: &[Vec<f64>], dim: usize) -> Result<()> {
    if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
        return Err(Error::invalid(name, format!("expected a {dim}x{dim} matrix")));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(name, "non-finite entry"));
    }
    let scale = matrix.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..dim {
        for j in 0..i {
            if (matrix[i][j] - matrix[j][i]).abs() > 1e-12 * scale {
                return Err(Error::invalid(name, format!("not symmetric at ({i},{j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(to_matrix(matrix));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(Error::invalid(
            name,
            format!("not positive semi-definite (eigenvalue {min:e})"),
        ));
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Quadratic risk `½ (w − θ)ᵀ A (w − θ)` with `A` symmetric PSD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTask {
    center: Vec<f64>,
    curvature: Vec<Vec<f64>>,
}

impl QuadraticTask {
    pub fn new(center: Vec<f64>, curvature: Vec<Vec<f64>>) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "empty"));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("center", "non-finite entry"));
        }
        check_psd("curvature", &curvature, center.len())?;
        Ok(QuadraticTask { center, curvature })
    }

    /// `A = curvature · I`
    pub fn isotropic(center: Vec<f64>, curvature: f64) -> Result<Self> {
        let d = center.len();
        let a = (0..d)
            .map(|i| (0..d).map(|j| if i == j { curvature } else { 0.0 }).collect())
            .collect();
        Self::new(center, a)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn curvature(&self) -> &[Vec<f64>] {
        &self.curvature
    }

    fn apply_curvature(&self, v: &[f64]) -> Vec<f64> {
        self.curvature
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest eigenvalue of `A`.
    pub fn max_curvature(&self) -> f64 {
        SymmetricEigen::new(to_matrix(&self.curvature))
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Gaussian feature law for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConditional {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// One labelled example; `label` is a class index in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    source: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize, source: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset", "no samples"))?;
        let dx = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dx {
                return Err(Error::invalid(
                    "dataset",
                    format!("sample {i} has {} features, expected {dx}", s.features.len()),
                ));
            }
            if s.label >= classes {
                return Err(Error::invalid(
                    "dataset",
                    format!("sample {i} has label {} outside 0..{classes}", s.label),
                ));
            }
        }
        Ok(Dataset { samples, source })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }
}

/// Softmax regression on a fixed dataset.
///
/// Weights are laid out class by class, each block holding `feature_dim`
/// coefficients followed by a bias, so `dim = classes · (feature_dim + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticTask {
    classes: Vec<ClassConditional>,
    dataset: Dataset,
}

impl LogisticTask {
    /// Builds the task and draws its `samples`-point dataset from `seed`.
    pub fn generate(classes: Vec<ClassConditional>, samples: usize, seed: u64, id: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        let dx = classes[0].mean.len();
        if dx == 0 {
            return Err(Error::invalid("classes", "empty feature mean"));
        }
        for c in &classes {
            check_dim("class mean", dx, c.mean.len())?;
            check_psd("covariance", &c.covariance, dx)?;
        }
        let dataset = draw_dataset(&classes, samples, seed, id)?;
        Ok(LogisticTask { classes, dataset })
    }

    /// Replaces the dataset with one supplied by the caller.
    pub fn with_dataset(classes: Vec<ClassConditional>, dataset: Dataset) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        check_dim("dataset features", classes[0].mean.len(), dataset.feature_dim())?;
        if dataset.samples.iter().any(|s| s.label >= classes.len()) {
            return Err(Error::invalid("dataset", "label out of range"));
        }
        Ok(LogisticTask { classes, dataset })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassConditional] {
        &self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.classes[0].mean.len()
    }

    pub fn dim(&self) -> usize {
        self.class_count() * (self.feature_dim() + 1)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Class logits for one feature vector.
    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.feature_dim() + 1;
        w.chunks(stride)
            .map(|block| {
                let (coef, bias) = block.split_at(stride - 1);
                coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[0]
            })
            .collect()
    }

    /// Cross-entropy of one sample.
    pub fn sample_loss(&self, w: &[f64], sample: &Sample) -> f64 {
        let z = self.logits(w, &sample.features);
        log_sum_exp(&z) - z[sample.label]
    }

    /// Adds the cross-entropy gradient of one sample to `out`.
    pub fn accumulate_sample_gradient(&self, w: &[f64], sample: &Sample, out: &mut [f64]) {
        let z = self.logits(w, &sample.features);
        let lse = log_sum_exp(&z);
        let stride = self.feature_dim() + 1;
        for (j, block) in out.chunks_mut(stride).enumerate() {
            let residual = (z[j] - lse).exp() - if j == sample.label { 1.0 } else { 0.0 };
            let (coef, bias) = block.split_at_mut(stride - 1);
            for (g, x) in coef.iter_mut().zip(&sample.features) {
                *g += residual * x;
            }
            bias[0] += residual;
        }
    }

    /// Mean cross-entropy over a subset of the dataset.
    pub fn batch_risk(&self, w: &[f64], batch: &[usize]) -> f64 {
        let s = &self.dataset.samples;
        batch.iter().map(|&i| self.sample_loss(w, &s[i])).sum::<f64>() / batch.len() as f64
    }

    /// Mean cross-entropy gradient over a subset of the dataset.
    pub fn batch_gradient(&self, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for &i in batch {
            self.accumulate_sample_gradient(w, &self.dataset.samples[i], &mut g);
        }
        let n = batch.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Square-root factor `L` with `L Lᵀ = Σ`, valid for singular PSD `Σ`.
fn covariance_factor(cov: &[Vec<f64>]) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(to_matrix(cov));
    let sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

fn draw_dataset(classes: &[ClassConditional], m: usize, seed: u64, id: usize) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::invalid("sample count", "must be at least 1"));
    }
    let factors: Vec<_> = classes.iter().map(|c| covariance_factor(&c.covariance)).collect();
    let dx = classes[0].mean.len();
    let mut rng = rng::stream(seed, &[id as u64]);
    let samples = (0..m)
        .map(|_| {
            let label = rng.random_range(0..classes.len());
            let z = DVector::from_fn(dx, |_, _| rng.sample::<f64, _>(StandardNormal));
            let shift = &factors[label] * z;
            let features = classes[label]
                .mean
                .iter()
                .zip(shift.iter())
                .map(|(mu, s)| mu + s)
                .collect();
            Sample { features, label }
        })
        .collect();
    Dataset::new(samples, classes.len(), id)
}

/// A client's data-generating objective.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::Quadratic(q) => q.dim(),
            TaskSpec::Logistic(l) => l.dim(),
        }
    }

    /// Number of local samples, if the task is dataset-backed.
    pub fn sample_count(&self) -> Option<usize> {
        match self {
            TaskSpec::Quadratic(_) => None,
            TaskSpec::Logistic(l) => Some(l.dataset.len()),
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticTask> {
        match self {
            TaskSpec::Quadratic(q) => Some(q),
            TaskSpec::Logistic(_) => None,
        }
    }
}

impl From<QuadraticTask> for TaskSpec {
    fn from(q: QuadraticTask) -> Self {
        TaskSpec::Quadratic(q)
    }
}

impl From<LogisticTask> for TaskSpec {
    fn from(l: LogisticTask) -> Self {
        TaskSpec::Logistic(l)
    }
}

/// Risk of `w` on `task`: the closed-form quadratic, or the empirical
/// cross-entropy over the task's dataset.
pub fn risk(w: &WeightVector, task: &TaskSpec) -> Result<f64> {
    check_dim("risk", task.dim(), w.dim())?;
    Ok(match task {
        TaskSpec::Quadratic(q) => {
            let diff: Vec<f64> = w.iter().zip(&q.center).map(|(a, b)| a - b).collect();
            let ad = q.apply_curvature(&diff);
            // PSD guarantees a non-negative value; clamp rounding below zero.
            (0.5 * diff.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>()).max(0.0)
        }
        TaskSpec::Logistic(l) => {
            let all: Vec<usize> = (0..l.dataset.len()).collect();
            l.batch_risk(w.as_slice(), &all)
        }
    })
}

/// Gradient of [`risk`] with respect to `w`.
pub fn grad(w: &WeightVector, task: &TaskSpec) -> Result<WeightVector> {
    check_dim("grad", task.dim(), w.dim())?;
    let g = match task {
        TaskSpec::Quadratic(q) => {
            let diff: Vec<f64> = w.iter().zip(&q.center).map(|(a, b)| a - b).collect();
            q.apply_curvature(&diff)
        }
        TaskSpec::Logistic(l) => {
            let all: Vec<usize> = (0..l.dataset.len()).collect();
            l.batch_gradient(w.as_slice(), &all)
        }
    };
    let g = WeightVector(g);
    if !g.is_finite() {
        return Err(Error::invalid("gradient", "non-finite value"));
    }
    Ok(g)
}

/// Mixture weights `α` on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("mixture weights", "empty"));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid("mixture weights", "entries must be finite and non-negative"));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights", format!("sum to {sum}, not 1")));
        }
        Ok(MixtureWeights(alphas))
    }

    pub fn uniform(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("mixture weights", "empty"));
        }
        Ok(MixtureWeights(vec![1.0 / p as f64; p]))
    }

    /// `α_k = m_k / Σ m`
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::invalid("sample counts", "need a positive total"));
        }
        Ok(MixtureWeights(
            counts.iter().map(|&m| m as f64 / total as f64).collect(),
        ))
    }

    /// Normalises arbitrary non-negative weights.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if raw.is_empty() || !(total > 0.0) || raw.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("mixture weights", "need non-negative entries with positive sum"));
        }
        Ok(MixtureWeights(raw.iter().map(|v| v / total).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for MixtureWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MixtureWeights::new(v)
    }
}

impl From<MixtureWeights> for Vec<f64> {
    fn from(m: MixtureWeights) -> Self {
        m.0
    }
}

fn check_mixture(tasks: &[TaskSpec], alpha: &MixtureWeights) -> Result<()> {
    if tasks.len() != alpha.len() {
        return Err(Error::LengthMismatch {
            context: "tasks vs mixture weights",
            left: tasks.len(),
            right: alpha.len(),
        });
    }
    Ok(())
}

/// `Σ_k α_k · risk(w, task_k)`, the server's risk on the mixture target.
pub fn mixture_risk(w: &WeightVector, tasks: &[TaskSpec], alpha: &MixtureWeights) -> Result<f64> {
    check_mixture(tasks, alpha)?;
    let mut total = 0.0;
    for (task, a) in tasks.iter().zip(alpha.as_slice()) {
        total += a * risk(w, task)?;
    }
    Ok(total)
}

/// `Σ_k α_k · grad(w, task_k)`.
pub fn mixture_grad(w: &WeightVector, tasks: &[TaskSpec], alpha: &MixtureWeights) -> Result<WeightVector> {
    check_mixture(tasks, alpha)?;
    let mut total = WeightVector::zeros(w.dim());
    for (task, a) in tasks.iter().zip(alpha.as_slice()) {
        total.axpy(*a, &grad(w, task)?);
    }
    Ok(total)
}

/// Minimiser of the mixture risk for quadratic tasks:
/// `(Σ α_k A_k)⁻¹ Σ α_k A_k θ_k`.
pub fn mixture_optimum(tasks: &[TaskSpec], alpha: &MixtureWeights) -> Result<WeightVector> {
    check_mixture(tasks, alpha)?;
    let quads: Vec<&QuadraticTask> = tasks
        .iter()
        .map(|t| t.as_quadratic().ok_or_else(|| Error::invalid("tasks", "mixture optimum needs quadratic tasks")))
        .collect::<Result<_>>()?;
    let d = quads[0].dim();
    let mut a_sum = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (q, &a) in quads.iter().zip(alpha.as_slice()) {
        check_dim("mixture optimum", d, q.dim())?;
        let ak = to_matrix(&q.curvature);
        let theta = DVector::from_column_slice(&q.center);
        rhs += (&ak * theta) * a;
        a_sum += ak * a;
    }
    let eig = SymmetricEigen::new(a_sum.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max.max(1.0)) {
        return Err(Error::SingularCurvature { min_eigenvalue: min });
    }
    let x = a_sum
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularCurvature { min_eigenvalue: min })?;
    Ok(WeightVector(x.iter().cloned().collect()))
}

/// Draws `m` i.i.d. samples from a logistic task's class-conditional law.
pub fn sample_dataset(task: &TaskSpec, m: usize, seed: u64) -> Result<Dataset> {
    match task {
        TaskSpec::Quadratic(_) => Err(Error::invalid("task", "quadratic tasks have no dataset")),
        TaskSpec::Logistic(l) => draw_dataset(&l.classes, m, seed, l.dataset.source),
    }
}
