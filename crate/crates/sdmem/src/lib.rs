//! Simulation and maximum-likelihood estimation for stochastic differential
//! mixed-effects models with linear Gaussian random effects.
//!
//! The pipeline: declare a model family ([`model::ModelSpec`]), simulate
//! subject paths ([`simulate`]), reduce them to discretized sufficient
//! statistics ([`suffstats`]), evaluate the closed-form population
//! likelihood and score ([`likelihood`]), solve the MLE system
//! ([`estimate`]), and test linear hypotheses on fixed effects
//! ([`inference`]). [`models`] bundles the transfer and FitzHugh-Nagumo
//! study families; [`harness`] runs seeded Monte Carlo experiment grids.
//!
//! Subject-level work (simulation, statistics, per-subject likelihood
//! terms, Monte Carlo replicates) is data-parallel via rayon under the
//! default `parallel` feature; disabling it swaps in a sequential fallback
//! with identical results.

pub mod error;
pub mod estimate;
mod exec;
pub mod harness;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod models;
pub mod rng;
pub mod simulate;
pub mod suffstats;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use model::{ModelSpec, SubjectConfig, Theta, Trajectory};
