//! Bayesian estimation of causal effects under limited covariate overlap,
//! with Gaussian process priors on the prognostic and treatment-effect
//! surfaces and a Metropolis-within-Gibbs sampler.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, which the file-facing layers use.

pub mod cli;
pub mod covariates;
pub mod error;
pub mod estimands;
pub mod geweke;
pub mod glm;
pub mod io;
pub mod kernel;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod probit;
pub mod random;
pub mod scalar;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};

pub type Dataset = model::Dataset<f64>;
pub type ParamState = model::ParamState<f64>;
pub type PdMatrix = kernel::PdMatrix<f64>;
pub type GpFactor = model::GpFactor<f64>;
pub type PosteriorDraws = mcmc::PosteriorDraws<f64>;
pub type ChainResult = mcmc::ChainResult<f64>;
