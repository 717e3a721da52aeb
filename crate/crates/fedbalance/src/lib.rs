//! FedBalance: a deterministic, desk-scale federated-learning simulator.
//!
//! Clients hold label-skewed shards produced by a Dirichlet partition. Each
//! round, sampled clients train a copy of the shared model on their shard and
//! the server aggregates the results by sample-count-weighted averaging.
//! Three local objectives are available:
//!
//! - **fedavg** — plain softmax cross-entropy;
//! - **fedprox** — cross-entropy plus a proximal pull toward the round-start
//!   global model;
//! - **fedbalance** — cross-entropy on fused logits `phi(x) + alpha ⊙ psi(x)`,
//!   where `psi` is a private low-capacity learner that never leaves the
//!   client and `alpha` is the client's per-class frequency vector. The
//!   biased `psi` damps attention on local majority classes and sharpens the
//!   penalty on minority classes.
//!
//! Everything is seeded: a master seed spawns independent streams for model
//! init, partitioning, per-round client sampling and per-client shuffling, so
//! experiments are bit-reproducible regardless of how many worker threads run
//! the clients.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod methods;
pub mod metrics;
pub mod nn;
pub mod registry;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
