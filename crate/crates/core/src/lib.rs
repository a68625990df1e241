//! Bayesian two-state non-homogeneous hidden Markov model with covariate
//! selection in both the mean and the transition equations.

pub mod baselines;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod forecast;
pub mod gibbs;
pub mod hmm;
pub mod linalg;
pub mod rjmcmc;
pub mod sampler;
pub mod scoring;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};
pub use types::*;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
