//! Bayesian disease mapping with localised spatial smoothing.
//!
//! Areal disease counts are modelled as Poisson with log-risk
//! `x_kᵀβ + φ_k`, where `φ` follows a Leroux CAR prior whose binary
//! neighbourhood weights are themselves random. Informative per-border priors
//! for those weights are elicited from an earlier period of the same data,
//! and a Metropolis-within-Gibbs sampler explores the joint posterior.

pub mod diagnostics;
pub mod elicit;
pub mod error;
pub mod glm;
pub mod gmrf;
pub mod graph;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod sim;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use graph::{ArealGraph, BorderId};
