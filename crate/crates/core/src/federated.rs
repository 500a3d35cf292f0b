//! Discrete-round federated learning: FedAvg and FedSGD.
//!
//! Client updates inside a round run in parallel. Each client draws its
//! minibatch order from a stream keyed on `(seed, round, client)` and the
//! server reduces the returned weights in client-id order, so the result does
//! not depend on the thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::task::{self, MixtureWeights, TaskSpec, WeightVector};

/// How the server weighs the selected clients' models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationWeighting {
    /// `m_k / Σ m_j` over the selected clients.
    #[default]
    SampleProportional,
    /// `1 / n` over the `n` selected clients.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedSgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    /// Fraction `C` of clients selected each round.
    pub client_fraction: f64,
    pub local_epochs: usize,
    /// Minibatch size; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub rounds: usize,
    #[serde(default)]
    pub aggregation_weighting: AggregationWeighting,
    #[serde(default)]
    pub seed: u64,
    /// Stop early once the server mixture risk drops to this value.
    #[serde(default)]
    pub target_risk: Option<f64>,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            client_fraction: 1.0,
            local_epochs: 1,
            batch_size: None,
            learning_rate: 0.1,
            rounds: 100,
            aggregation_weighting: AggregationWeighting::SampleProportional,
            seed: 0,
            target_risk: None,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.client_fraction) {
            return bad("client_fraction", "must lie in [0, 1]");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be positive and finite");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        Ok(())
    }

    /// Number of clients selected per round out of `p`: `⌈C·p⌉`, at least one.
    pub fn selected_count(&self, p: usize) -> usize {
        // tolerance keeps ⌈0.1·10⌉ at 1 despite rounding in the product
        let n = (self.client_fraction * p as f64 - 1e-9).ceil().max(1.0) as usize;
        n.min(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub weights: WeightVector,
    pub task: TaskSpec,
    pub sample_count: usize,
}

impl ClientState {
    /// Client starting at zero weights; the sample count is the dataset size
    /// for logistic tasks and 1 for quadratic ones.
    pub fn new(task: TaskSpec) -> Self {
        let sample_count = task.sample_count().unwrap_or(1);
        ClientState {
            weights: WeightVector::zeros(task.dim()),
            task,
            sample_count,
        }
    }

    pub fn with_sample_count(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("sample_count", "must be at least 1"));
        }
        self.sample_count = m;
        Ok(self)
    }
}

/// Per-round record of the server state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub server_weights: WeightVector,
    pub server_risk: f64,
    pub selected: Vec<usize>,
}

/// ClientUpdate: `E` epochs of minibatch gradient descent from `server_w`.
///
/// Quadratic tasks have no dataset, so each epoch is a single exact gradient
/// step. Logistic datasets are shuffled once per call and split into batches.
pub fn client_update(
    client: &ClientState,
    client_id: usize,
    server_w: &WeightVector,
    cfg: &FedConfig,
    round_seed: u64,
) -> Result<WeightVector> {
    let diverged = || Error::ClientDivergence {
        client: client_id,
        round: None,
    };
    let mut w = server_w.clone();
    match &client.task {
        TaskSpec::Quadratic(_) => {
            for _ in 0..cfg.local_epochs {
                let g = task::grad(&w, &client.task).map_err(|_| diverged())?;
                w.axpy(-cfg.learning_rate, &g);
                if !w.is_finite() {
                    return Err(diverged());
                }
            }
        }
        TaskSpec::Logistic(logistic) => {
            let m = logistic.dataset().len();
            let batch = match cfg.batch_size {
                Some(b) if b > m => {
                    log::warn!("batch size {b} exceeds client {client_id}'s {m} samples; clamping");
                    m
                }
                Some(b) => b,
                None => m,
            };
            let mut order: Vec<usize> = (0..m).collect();
            let mut rng = rng::stream(round_seed, &[client_id as u64]);
            order.shuffle(&mut rng);
            for _ in 0..cfg.local_epochs {
                for chunk in order.chunks(batch) {
                    let g = logistic.batch_gradient(w.as_slice(), chunk);
                    for (wi, gi) in w.as_mut_slice().iter_mut().zip(&g) {
                        *wi -= cfg.learning_rate * gi;
                    }
                    if !w.is_finite() {
                        return Err(diverged());
                    }
                }
            }
        }
    }
    Ok(w)
}

fn round_seed(seed: u64, round: usize) -> u64 {
    rng::derive_seed(seed, &[round as u64])
}

/// Picks `⌈C·p⌉` distinct clients uniformly at random for `round`, sorted.
pub fn select_clients(p: usize, cfg: &FedConfig, round: usize) -> Vec<usize> {
    let n = cfg.selected_count(p);
    let mut rng = rng::stream(cfg.seed, &[round as u64, u64::MAX]);
    let mut ids = rand::seq::index::sample(&mut rng, p, n).into_vec();
    ids.sort_unstable();
    ids
}

/// Aggregation weights for the selected clients; they sum to one.
pub fn aggregation_weights(clients: &[ClientState], selected: &[usize], weighting: AggregationWeighting) -> Vec<f64> {
    match weighting {
        AggregationWeighting::Uniform => vec![1.0 / selected.len() as f64; selected.len()],
        AggregationWeighting::SampleProportional => {
            let total: usize = selected.iter().map(|&k| clients[k].sample_count).sum();
            selected
                .iter()
                .map(|&k| clients[k].sample_count as f64 / total as f64)
                .collect()
        }
    }
}

/// One FedAvg round: select, update in parallel, then average once.
pub fn fedavg_round(
    clients: &[ClientState],
    server_w: &WeightVector,
    cfg: &FedConfig,
    round: usize,
) -> Result<(WeightVector, Vec<usize>)> {
    if clients.is_empty() {
        return Err(Error::invalid("clients", "no clients"));
    }
    let selected = select_clients(clients.len(), cfg, round);
    let seed = round_seed(cfg.seed, round);
    let updates: Vec<WeightVector> = selected
        .par_iter()
        .map(|&k| {
            client_update(&clients[k], k, server_w, cfg, seed).map_err(|e| match e {
                Error::ClientDivergence { client, .. } => Error::ClientDivergence {
                    client,
                    round: Some(round),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let weights = aggregation_weights(clients, &selected, cfg.aggregation_weighting);
    let mut next = WeightVector::zeros(server_w.dim());
    for (update, a) in updates.iter().zip(&weights) {
        next.axpy(*a, update);
    }
    Ok((next, selected))
}

/// One FedSGD step: `w − η Σ_k (m_k/m) ∇L_k(w)` over all clients.
pub fn fedsgd_round(clients: &[ClientState], server_w: &WeightVector, cfg: &FedConfig) -> Result<WeightVector> {
    if clients.is_empty() {
        return Err(Error::invalid("clients", "no clients"));
    }
    let all: Vec<usize> = (0..clients.len()).collect();
    let weights = aggregation_weights(clients, &all, AggregationWeighting::SampleProportional);
    let grads: Vec<WeightVector> = clients
        .par_iter()
        .map(|c| task::grad(server_w, &c.task))
        .collect::<Result<_>>()?;
    let mut next = server_w.clone();
    for (g, a) in grads.iter().zip(&weights) {
        next.axpy(-cfg.learning_rate * a, g);
    }
    Ok(next)
}

/// Mixture weights `m_k / m` implied by the clients' sample counts.
pub fn sample_weights(clients: &[ClientState]) -> Result<MixtureWeights> {
    let counts: Vec<usize> = clients.iter().map(|c| c.sample_count).collect();
    MixtureWeights::from_counts(&counts)
}

/// Runs `cfg.rounds` rounds (or until `target_risk` is reached) from `initial`.
///
/// The log records the server's mixture risk after every round, with the
/// mixture weighted by sample counts.
pub fn run_federated(
    clients: &[ClientState],
    initial: &WeightVector,
    cfg: &FedConfig,
    algorithm: Algorithm,
) -> Result<Vec<RoundLog>> {
    cfg.validate()?;
    let tasks: Vec<TaskSpec> = clients.iter().map(|c| c.task.clone()).collect();
    let alpha = sample_weights(clients)?;
    let mut w = initial.clone();
    let mut logs = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let (next, selected) = match algorithm {
            Algorithm::FedAvg => fedavg_round(clients, &w, cfg, round)?,
            Algorithm::FedSgd => (
                fedsgd_round(clients, &w, cfg)?,
                (0..clients.len()).collect(),
            ),
        };
        if !next.is_finite() {
            return Err(Error::ClientDivergence {
                client: selected.first().copied().unwrap_or(0),
                round: Some(round),
            });
        }
        w = next;
        let server_risk = task::mixture_risk(&w, &tasks, &alpha)?;
        logs.push(RoundLog {
            round,
            server_weights: w.clone(),
            server_risk,
            selected,
        });
        if cfg.target_risk.is_some_and(|t| server_risk <= t) {
            break;
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{ClassConditional, LogisticTask, QuadraticTask};
    use rand::Rng;

    fn scalar_client(theta: f64, m: usize) -> ClientState {
        ClientState::new(QuadraticTask::isotropic(vec![theta], 1.0).unwrap().into())
            .with_sample_count(m)
            .unwrap()
    }

    fn full_batch(eta: f64, epochs: usize) -> FedConfig {
        FedConfig {
            learning_rate: eta,
            local_epochs: epochs,
            ..FedConfig::default()
        }
    }

    #[test]
    fn client_update_examples() {
        let c = scalar_client(0.0, 1);
        let w = WeightVector::new(vec![1.0]);
        let zero_step = full_batch(0.0, 3);
        assert_eq!(client_update(&c, 0, &w, &zero_step, 0).unwrap()[0], 1.0);
        assert!((client_update(&c, 0, &w, &full_batch(0.1, 1), 0).unwrap()[0] - 0.9).abs() < 1e-15);
        assert!((client_update(&c, 0, &w, &full_batch(0.1, 2), 0).unwrap()[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn client_update_reports_divergence() {
        let c = scalar_client(0.0, 1);
        let w = WeightVector::new(vec![1e300]);
        let err = client_update(&c, 3, &w, &full_batch(1e10, 5), 0).unwrap_err();
        assert!(matches!(err, Error::ClientDivergence { client: 3, .. }));
    }

    #[test]
    fn logistic_client_clamps_large_batches() {
        let eye = vec![vec![1.0]];
        let classes = vec![
            ClassConditional { mean: vec![-1.0], covariance: eye.clone() },
            ClassConditional { mean: vec![1.0], covariance: eye },
        ];
        let c = ClientState::new(LogisticTask::generate(classes, 8, 1, 0).unwrap().into());
        let w = WeightVector::zeros(4);
        let big = FedConfig { batch_size: Some(100), ..full_batch(0.5, 1) };
        let full = full_batch(0.5, 1);
        assert_eq!(
            client_update(&c, 0, &w, &big, 9).unwrap(),
            client_update(&c, 0, &w, &full, 9).unwrap()
        );
        let small = FedConfig { batch_size: Some(3), ..full_batch(0.5, 2) };
        let a = client_update(&c, 0, &w, &small, 9).unwrap();
        assert_eq!(a, client_update(&c, 0, &w, &small, 9).unwrap());
        assert!(a.is_finite());
    }

    #[test]
    fn fedavg_aggregation_examples() {
        let cfg = FedConfig { aggregation_weighting: AggregationWeighting::Uniform, ..full_batch(0.1, 1) };
        let w = WeightVector::new(vec![1.0]);
        let same = vec![scalar_client(0.0, 1), scalar_client(0.0, 1)];
        let (avg, sel) = fedavg_round(&same, &w, &cfg, 0).unwrap();
        assert_eq!(sel, vec![0, 1]);
        assert!((avg[0] - 0.9).abs() < 1e-15);

        // η=1, E=1 sends each client straight to its center: updates (0, 2)
        let unit = FedConfig { aggregation_weighting: AggregationWeighting::Uniform, ..full_batch(1.0, 1) };
        let pair = vec![scalar_client(0.0, 1), scalar_client(2.0, 3)];
        assert!((fedavg_round(&pair, &w, &unit, 0).unwrap().0[0] - 1.0).abs() < 1e-15);
        let prop = FedConfig { aggregation_weighting: AggregationWeighting::SampleProportional, ..unit };
        assert!((fedavg_round(&pair, &w, &prop, 0).unwrap().0[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn fedsgd_examples() {
        let cfg = full_batch(0.1, 1);
        let at_opt = vec![scalar_client(0.5, 2), scalar_client(0.5, 5)];
        let w = WeightVector::new(vec![0.5]);
        assert_eq!(fedsgd_round(&at_opt, &w, &cfg).unwrap(), w);

        let pair = vec![scalar_client(0.0, 4), scalar_client(2.0, 4)];
        let next = fedsgd_round(&pair, &WeightVector::new(vec![0.0]), &cfg).unwrap();
        assert!((next[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn selection_size_and_frequency() {
        let p = 10;
        let cfg = FedConfig { client_fraction: 0.3, seed: 17, ..FedConfig::default() };
        let rounds = 10_000;
        let mut counts = vec![0usize; p];
        for r in 0..rounds {
            let sel = select_clients(p, &cfg, r);
            assert_eq!(sel.len(), 3);
            assert!(sel.windows(2).all(|w| w[0] < w[1]));
            for k in sel {
                counts[k] += 1;
            }
        }
        let sigma = (rounds as f64 * 0.3 * 0.7).sqrt();
        for c in counts {
            assert!((c as f64 - 0.3 * rounds as f64).abs() <= 5.0 * sigma, "{c}");
        }
    }

    #[test]
    fn selected_count_rounds_up() {
        let cfg = |c| FedConfig { client_fraction: c, ..FedConfig::default() };
        assert_eq!(cfg(0.1).selected_count(10), 1);
        assert_eq!(cfg(0.15).selected_count(10), 2);
        assert_eq!(cfg(0.0).selected_count(10), 1);
        assert_eq!(cfg(1.0).selected_count(7), 7);
    }

    #[test]
    fn aggregation_weights_sum_to_one() {
        let mut rng = rng::stream(3, &[]);
        let clients: Vec<ClientState> = (0..9).map(|k| scalar_client(k as f64, rng.random_range(1..50))).collect();
        for weighting in [AggregationWeighting::Uniform, AggregationWeighting::SampleProportional] {
            let w = aggregation_weights(&clients, &[0, 2, 3, 8], weighting);
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn run_with_tiny_step_has_constant_risk_and_honours_target() {
        let clients = vec![scalar_client(0.0, 1), scalar_client(2.0, 1)];
        let w0 = WeightVector::new(vec![5.0]);
        let cfg = FedConfig { learning_rate: 1e-300, rounds: 5, ..FedConfig::default() };
        let logs = run_federated(&clients, &w0, &cfg, Algorithm::FedSgd).unwrap();
        assert!(logs.iter().all(|l| l.server_risk == logs[0].server_risk));

        let cfg = FedConfig { learning_rate: 0.5, rounds: 1000, target_risk: Some(0.5 + 1e-6), ..FedConfig::default() };
        let logs = run_federated(&clients, &w0, &cfg, Algorithm::FedSgd).unwrap();
        assert!(logs.len() < 1000);
        assert!(logs.last().unwrap().server_risk <= 0.5 + 1e-6);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = FedConfig { client_fraction: 1.5, ..FedConfig::default() };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "client_fraction"),
            other => panic!("{other:?}"),
        }
    }
}
