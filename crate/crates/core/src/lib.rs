//! Bayesian spatio-temporal Gaussian-process regression for weekly
//! infectious-disease counts.
//!
//! The latent log excess risk `f` over (location, week) cells is a Gaussian
//! process with a composite space-time kernel, represented through a grid of
//! inducing inputs. Counts follow a negative-binomial (optionally
//! zero-inflated) law with mean `population * crude_rate * exp(f)`.
//! Inference is Hamiltonian Monte Carlo; models are compared with PSIS-LOO,
//! CRPS and a Freeman-Tukey posterior predictive p-value.

pub mod data;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod obs;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
