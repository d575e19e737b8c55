//! Hamiltonian Monte Carlo over the joint unconstrained parameter space, the
//! model's priors, and convergence diagnostics.

mod diagnostics;
mod hmc;
mod posterior;
mod priors;
mod samples;

pub use diagnostics::{ess, gelman_rubin, mcse, render_summary, summarize, summarize_param, ParamSummary};
pub use hmc::{hmc_run, ChainRun, HmcRun, LogDensity, SamplerConfig};
pub use posterior::GpPosterior;
pub use priors::PriorConfig;
pub use samples::{sample_names, ChainStats, PosteriorSamples};
