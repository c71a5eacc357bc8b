//! Moran model with general recombination, mutation and resampling.
//!
//! The crate bundles four engines that check each other:
//!
//! * [`sim`]: exact stochastic simulation of the population chain, with the
//!   creation/destruction counters of marginal observables.
//! * [`hierarchy`]: the closed, finite linear ODE system satisfied by
//!   expectations of products of marginal counts indexed by partial
//!   partitions of the sites, plus the closed-form two-site and
//!   single-crossover special cases.
//! * [`oracle`]: the full generator of the chain on tiny instances, giving
//!   exact transient distributions and exact moments.
//! * [`deterministic`]: the infinite-population recombination flow.
//!
//! [`stats`] orchestrates replicated simulation and the comparisons between
//! engines; [`config`] holds the JSON run configuration used by the CLI.

pub mod combinatorics;
pub mod config;
pub mod deterministic;
pub mod error;
pub mod hierarchy;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod report;
pub mod scalar;
pub mod sim;
pub mod stats;

pub use combinatorics::{PartialPartition, TripleIjk};
pub use error::{Error, Result};
pub use model::{
    Genotype, MarginalPopulationState, MarginalType, ModelParams, PopulationState, RateMap, SignedUpdate, SiteSet,
    TypeSpace,
};
