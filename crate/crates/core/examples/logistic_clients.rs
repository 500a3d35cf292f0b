//! Minibatch FedAvg on softmax-regression clients with shifted class means
//! and partial participation.
//!
//! `cargo run --example logistic_clients`

use mfflsim::experiments::config::{ClientsConfig, TaskFamily};
use mfflsim::experiments::scenarios::generate_clients;
use mfflsim::federated::{run_federated, Algorithm, FedConfig};
use mfflsim::WeightVector;

fn main() -> mfflsim::Result<()> {
    let clients = generate_clients(
        &ClientsConfig {
            family: TaskFamily::Logistic,
            count: 12,
            dim: 2,
            center_spread: 0.75,
            sample_min: 30,
            sample_max: 90,
            ..ClientsConfig::default()
        },
        2024,
    )?;
    let cfg = FedConfig {
        client_fraction: 0.25,
        local_epochs: 3,
        batch_size: Some(16),
        learning_rate: 0.05,
        rounds: 60,
        seed: 1,
        ..FedConfig::default()
    };
    let logs = run_federated(&clients, &WeightVector::zeros(clients[0].task.dim()), &cfg, Algorithm::FedAvg)?;
    for l in logs.iter().filter(|l| l.round % 10 == 0 || l.round + 1 == logs.len()) {
        println!("round {:>3}  clients {:?}  server risk {:.4}", l.round, l.selected, l.server_risk);
    }
    Ok(())
}
