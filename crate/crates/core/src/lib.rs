//! Deterministic federated-learning simulator with mixture-of-experts robust
//! aggregation.
//!
//! Each round a cohort of clients trains from the broadcast model, some of
//! them adversarially, and the server weights their submissions by how close
//! they land to a reference model it trains on shared public data. The crate
//! exposes every stage: the dense network and its training loops, data
//! preparation, attacks, weightings, server-side data curation, the round
//! loop, and post-hoc diagnostics.

pub mod aggregation;
pub mod analysis;
pub mod attack;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod idx;
pub mod nn;
pub mod rng;
pub mod server;
pub mod simulator;

pub use aggregation::{aggregate, compute_weights, AggregatorKind, SimplexWeights, Utility};
pub use attack::{AttackConfig, AttackKind, Role};
pub use config::ExperimentConfig;
pub use data::{Dataset, Purity};
pub use error::{Error, Result};
pub use nn::{Activation, ModelSpec, ParamVector};
pub use server::Curation;
pub use simulator::{run, RoundRecord, RunResult, Simulation, StopReason};
