//! Run configuration file.
//!
//! A TOML document; every section is optional and unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! threads = 0
//!
//! [data]
//! counts = "counts.csv"
//! locations = "locations.csv"
//! population = "population.csv"
//! holdout = 4
//!
//! [model]
//! preset = "model2"
//!
//! [sampler]
//! n_chains = 4
//! warmup = 1000
//! n_samples = 1000
//! ```
//!
//! Relative paths are resolved against the directory of the configuration
//! file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stgp::data::SpatialProjection;
use stgp::eval::EvalOptions;
use stgp::forecast::ForecastOptions;
use stgp::gp::Perturbation;
use stgp::model::{InducingPolicy, KernelStructure, ModelSpec};
use stgp::obs::FamilyKind;
use stgp::sampler::{PriorConfig, SamplerConfig};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for the chains; 0 uses one per chain.
    pub threads: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub priors: PriorConfig,
    pub sampler: SamplerSection,
    pub inducing: InducingPolicy,
    pub forecast: ForecastConfig,
    pub evaluate: EvaluateConfig,
    pub convergence: ConvergenceConfig,
    pub simulate: SimulateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub counts: PathBuf,
    pub locations: PathBuf,
    pub population: PathBuf,
    /// Trailing weeks withheld from fitting and used for evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            counts: "counts.csv".into(),
            locations: "locations.csv".into(),
            population: "population.csv".into(),
            holdout: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// One of `model1` to `model6`; the other keys then override it.
    /// Without a preset, `time` and `space` are required; with neither,
    /// `model2` is used.
    pub preset: Option<String>,
    pub name: Option<String>,
    pub time: Option<String>,
    pub space: Option<String>,
    pub interaction: Option<bool>,
    pub bias: Option<bool>,
    pub period: Option<f64>,
    pub family: Option<FamilyKind>,
    pub projection: SpatialProjection,
}

/// Sampler settings; the seed and thread count come from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub n_chains: usize,
    pub warmup: usize,
    pub n_samples: usize,
    pub leapfrog_min: usize,
    pub leapfrog_max: usize,
    pub target_accept: f64,
    pub step_size: Option<f64>,
    pub adapt_metric: bool,
    pub init_jitter: f64,
    pub max_energy_error: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSection {
            n_chains: d.n_chains,
            warmup: d.warmup,
            n_samples: d.n_samples,
            leapfrog_min: d.leapfrog_min,
            leapfrog_max: d.leapfrog_max,
            target_accept: d.target_accept,
            step_size: d.step_size,
            adapt_metric: d.adapt_metric,
            init_jitter: d.init_jitter,
            max_energy_error: d.max_energy_error,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Weeks forecast after the training window.
    pub horizon: usize,
    pub n_draws: usize,
    pub perturbation: Perturbation,
    pub geojson: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 4,
            n_draws: 1000,
            perturbation: Perturbation::Diagonal,
            geojson: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub loo_draws: usize,
    pub ppc_draws: usize,
    pub crps_split: usize,
    pub n_draws: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let d = EvalOptions::default();
        EvaluateConfig {
            loo_draws: d.loo_draws,
            ppc_draws: d.ppc_draws,
            crps_split: d.crps_split,
            n_draws: d.forecast.n_draws,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Fits with any R-hat at or above this value exit with status 3.
    pub rhat_threshold: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { rhat_threshold: 1.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_locations: usize,
    pub n_weeks: usize,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    pub population_range: (f64, f64),
    /// Cases per person-week at zero latent field.
    pub base_rate: f64,
    pub phi: f64,
    pub lambda: f64,
    /// True kernel hyperparameters by layout name, on the natural scale.
    /// Unlisted ones take a default by kind.
    pub truth: BTreeMap<String, f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_locations: 10,
            n_weeks: 30,
            lon_range: (-3.0, 0.0),
            lat_range: (51.0, 54.0),
            population_range: (5e4, 5e5),
            base_rate: 1e-4,
            phi: 0.1,
            lambda: -1.0,
            truth: BTreeMap::new(),
        }
    }
}

impl SimulateConfig {
    /// True kernel values in layout order.
    pub fn kernel_truth(&self, names: &[String]) -> Result<Vec<f64>, CliError> {
        if let Some(unknown) = self.truth.keys().find(|k| !names.contains(k)) {
            return Err(CliError::Config(format!(
                "simulate.truth has unknown parameter `{unknown}` (model has {})",
                names.join(", ")
            )));
        }
        Ok(names
            .iter()
            .map(|n| {
                self.truth.get(n).copied().unwrap_or(if n.starts_with("len_time") {
                    6.0
                } else if n.starts_with("len_") {
                    1.5
                } else if n.starts_with("sigma_") {
                    0.5
                } else {
                    0.3
                })
            })
            .collect())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file, resolving its relative data
    /// paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.counts, &mut cfg.data.locations, &mut cfg.data.population] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks every section before any data is read.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model_spec()?;
        self.sampler_config().validate()?;
        if !(self.convergence.rhat_threshold > 1.0) {
            return Err(CliError::Config("convergence.rhat_threshold must exceed 1".into()));
        }
        if self.forecast.horizon == 0 || self.forecast.n_draws == 0 {
            return Err(CliError::Config(
                "forecast.horizon and forecast.n_draws must be positive".into(),
            ));
        }
        let e = &self.evaluate;
        if e.loo_draws == 0 || e.ppc_draws == 0 || e.n_draws < 2 || e.crps_split == 0 || e.crps_split >= e.n_draws {
            return Err(CliError::Config(
                "evaluate needs positive draw counts and 0 < crps_split < n_draws".into(),
            ));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let m = &self.model;
        let base = match (&m.preset, &m.time, &m.space) {
            (Some(p), _, _) => ModelSpec::preset(p)?,
            (None, None, None) => ModelSpec::preset("model2")?,
            (None, Some(time), Some(space)) => {
                ModelSpec::new("custom", KernelStructure::new(time, space), FamilyKind::NegBinomial)?
            }
            _ => {
                return Err(CliError::Config(
                    "model needs either `preset` or both `time` and `space`".into(),
                ))
            }
        };
        let mut structure = base.structure.clone();
        if let Some(t) = &m.time {
            structure.time = t.clone();
        }
        if let Some(s) = &m.space {
            structure.space = s.clone();
        }
        if let Some(v) = m.interaction {
            structure.interaction = v;
        }
        if let Some(v) = m.bias {
            structure.bias = v;
        }
        if let Some(v) = m.period {
            structure.period = v;
        }
        let name = m.name.clone().unwrap_or(base.name.clone());
        let mut spec = ModelSpec::new(&name, structure, m.family.unwrap_or(base.family))?;
        spec.priors = self.priors;
        spec.inducing = self.inducing;
        spec.projection = m.projection;
        spec.validate()?;
        Ok(spec)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            n_chains: s.n_chains,
            warmup: s.warmup,
            n_samples: s.n_samples,
            leapfrog_min: s.leapfrog_min,
            leapfrog_max: s.leapfrog_max,
            target_accept: s.target_accept,
            step_size: s.step_size,
            adapt_metric: s.adapt_metric,
            init_jitter: s.init_jitter,
            max_energy_error: s.max_energy_error,
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn forecast_options(&self) -> ForecastOptions {
        ForecastOptions {
            n_draws: self.forecast.n_draws,
            perturbation: self.forecast.perturbation,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            loo_draws: self.evaluate.loo_draws,
            ppc_draws: self.evaluate.ppc_draws,
            crps_split: self.evaluate.crps_split,
            forecast: ForecastOptions {
                n_draws: self.evaluate.n_draws,
                ..self.forecast_options()
            },
            seed: self.seed,
        }
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
