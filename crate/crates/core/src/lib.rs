//! Communication-efficient federated group distributionally robust
//! optimization on simulated heterogeneous clients.
//!
//! The crate provides:
//!
//! - exact evaluators for the two robust objectives: the mean-of-top-K
//!   (CVaR threshold) form and the KL-regularized log-sum-exp form, with
//!   their gradients/subgradients and a Moreau-envelope proximal
//!   diagnostic for the non-smooth case ([`objectives`]);
//! - the local update rules that track the compositional quantities with
//!   moving averages and communicate only at round boundaries
//!   ([`algorithms`]): the CVaR threshold method, the KL method, its
//!   Adam-type variant, a LocalAdam ERM baseline, and plain FedAvg;
//! - a deterministic round/step simulator with per-(client, round) random
//!   streams, so parallel and sequential execution are bit-identical
//!   ([`federation`]);
//! - synthetic heterogeneous client generators and a Dirichlet label
//!   partitioner ([`datagen`]);
//! - a runtime property battery ([`validation`]).

pub mod algorithms;
pub mod config;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod validation;

pub use algorithms::{
    aggregate, apply_broadcast, communication_cost, AggregationSpec, ClientState, LocalStepResult,
};
pub use config::{validate_config, Algorithm, ConfigViolation, RunConfig};
pub use error::{FgdroError, Result};
pub use federation::{
    evaluate, resume, run, select_output, Checkpoint, EngineOptions, Evaluation, FederationRun,
};
pub use metrics::MetricsRecord;
pub use models::{Client, ClientDataset, LossModel, Sample};
pub use objectives::{
    cvar_objective, cvar_optimal_value, cvar_subgradient, kl_client_weights, kl_gradient,
    kl_objective, prox_point, CvarObjective, KlObjective, ProxDiagnostic, ProxPoint,
};
pub use params::ParameterVector;
pub use rng::derive_rng;
