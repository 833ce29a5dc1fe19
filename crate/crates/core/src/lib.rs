//! Deterministic simulator for decentralized federated learning.
//!
//! Clients hold non-IID shards of a synthetic dataset, run `K` local steps
//! (plain SGD, heavy-ball momentum, or sharpness-aware SAM steps) and then
//! average with their graph neighbours through a symmetric doubly-stochastic
//! gossip matrix, optionally repeating the exchange `Q` times per round.
//! Centralized FedAvg/FedSAM baselines share the same local machinery.
//!
//! Module map:
//!
//! - [`topology`]: communication graphs, Metropolis-Hastings gossip matrices,
//!   spectral gap and matrix-power diagnostics.
//! - [`partition`]: Gaussian-blob datasets, IID/Dirichlet/pathological
//!   client shards, and the gradient-heterogeneity estimator.
//! - [`model`]: quadratic, softmax-regression and one-hidden-layer tanh MLP
//!   objectives with exact gradients and Hessian-vector products.
//! - [`optimizer`]: SGD, momentum and SAM local steps.
//! - [`fedalgo`]: gossip rounds and the full federated training loop.
//! - [`metrics`]: consensus distance, gradient norms, the topology factor
//!   `phi` and the convergence-bound calculator.
//! - [`harness`]: configuration, experiment output and sweeps.

pub mod error;
pub mod fedalgo;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod partition;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
pub use model::ParamVector;
