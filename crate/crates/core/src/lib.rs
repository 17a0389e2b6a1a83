//! Kernel ridge regression estimators for long-term causal inference from
//! fused experimental/observational data: dose-response curves, debiased
//! treatment effects with confidence intervals, and counterfactual
//! distributions sampled by kernel herding, plus the synthetic
//! data-generating processes used to verify them.

pub mod cli;
pub mod data;
pub mod distributions;
pub mod dose_response;
pub mod embeddings;
pub mod error;
pub mod kernels;
pub mod ridge;
pub mod semiparametric;
pub mod synthetic;
pub mod threads;

#[cfg(test)]
pub(crate) mod test_oracles;

pub use error::{Error, Result};
