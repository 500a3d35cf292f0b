//! Federated learning viewed as a mean-field game.
//!
//! The crate simulates the same learning process at several levels of
//! abstraction and checks each against closed-form or brute-force oracles:
//!
//! * [`federated`]: discrete FedAvg / FedSGD rounds over simulated clients.
//! * [`sde`]: continuous-time controlled gradient dynamics, integrated with
//!   Euler–Maruyama, including the coupled federated particle system whose
//!   drift carries the server aggregation term.
//! * [`meanfield`]: empirical measures, Wasserstein distances, the
//!   representative client and Picard iteration for McKean–Vlasov fixed points.
//! * [`control`]: 1-D finite-difference HJB (backward) and Fokker–Planck
//!   (forward) solvers, their coupling, and a linear-quadratic reference.
//! * [`payoff`]: Monte-Carlo payoffs, verification and Nash deviation checks.
//!
//! [`experiments`] ties these together into config-driven scenarios that
//! write CSV/JSON artifacts; the `mfflsim` binary is a thin wrapper around it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod experiments;
pub mod federated;
pub mod meanfield;
pub mod payoff;
pub mod rng;
pub mod sde;
pub mod task;

pub use error::{Error, Result};
pub use task::{MixtureWeights, TaskSpec, WeightVector};
