//! Model specifications (kernel structure, observation family, priors,
//! inducing grid) and fitted models.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpatialProjection};
use crate::error::{Error, Result};
use crate::gp::{select_inducing_grid, InducingGrid, SorProjector};
use crate::kernel::{
    build_spatiotemporal, parse_kernel, KernelExpr, ParamLayout, DEFAULT_PERIOD, LAT_DIM, LON_DIM, TIME_DIM,
};
use crate::obs::{FamilyKind, ObsFamily, OffsetTable};
use crate::sampler::{self, GpPosterior, PosteriorSamples, PriorConfig, SamplerConfig};

/// Kernel structure as written in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelStructure {
    /// Expression over the week dimension, e.g. `"matern32 + periodic"`.
    pub time: String,
    /// Expression over (lon, lat).
    pub space: String,
    /// Adds the `k_time * k_space` term.
    #[serde(default = "yes")]
    pub interaction: bool,
    /// Adds a constant (bias) kernel for the mean level.
    #[serde(default = "yes")]
    pub bias: bool,
    /// Period of periodic kernels, in weeks.
    #[serde(default = "default_period")]
    pub period: f64,
}

fn yes() -> bool {
    true
}

fn default_period() -> f64 {
    DEFAULT_PERIOD
}

impl KernelStructure {
    pub fn new(time: &str, space: &str) -> Self {
        KernelStructure {
            time: time.into(),
            space: space.into(),
            interaction: true,
            bias: true,
            period: DEFAULT_PERIOD,
        }
    }

    /// Builds `k_time + k_space (+ k_time * k_space) (+ bias)` with unit
    /// hyperparameters.
    pub fn build(&self) -> Result<KernelExpr> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::domain(format!("period must be positive, got {}", self.period)));
        }
        let t = parse_kernel(&self.time, "time", &[TIME_DIM], self.period)?;
        let s = parse_kernel(&self.space, "space", &[LON_DIM, LAT_DIM], self.period)?;
        let mut k = if self.interaction {
            build_spatiotemporal(t, s)?
        } else {
            t.sum(s)
        };
        if self.bias {
            k = k.sum(KernelExpr::bias(1.0, "bias")?);
        }
        ParamLayout::of(&k)?;
        Ok(k)
    }
}

/// Grid inducing-input policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InducingPolicy {
    pub stride: usize,
    pub include_final: bool,
}

impl Default for InducingPolicy {
    fn default() -> Self {
        InducingPolicy {
            stride: 5,
            include_final: true,
        }
    }
}

/// One row of the model ladder: kernel, family, priors and inducing grid.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub structure: KernelStructure,
    /// Built from `structure`; its hyperparameter values are only used when
    /// `fix_kernel` is set.
    pub kernel: KernelExpr,
    pub family: FamilyKind,
    pub priors: PriorConfig,
    pub inducing: InducingPolicy,
    pub projection: SpatialProjection,
    /// Holds the kernel hyperparameters at the values in `kernel` instead of
    /// sampling them.
    pub fix_kernel: bool,
}

/// Names of the built-in model ladder.
pub const PRESETS: [&str; 6] = ["model1", "model2", "model3", "model4", "model5", "model6"];

impl ModelSpec {
    pub fn new(name: &str, structure: KernelStructure, family: FamilyKind) -> Result<Self> {
        let kernel = structure.build()?;
        Ok(ModelSpec {
            name: name.into(),
            structure,
            kernel,
            family,
            priors: PriorConfig::default(),
            inducing: InducingPolicy::default(),
            projection: SpatialProjection::Degrees,
            fix_kernel: false,
        })
    }

    /// The six kernel/family combinations of the model ladder.
    pub fn preset(name: &str) -> Result<Self> {
        let (time, space, family) = match name {
            "model1" => ("rbf", "matern32", FamilyKind::NegBinomial),
            "model2" => ("matern32", "matern32", FamilyKind::NegBinomial),
            "model3" => ("matern32 + periodic", "matern32", FamilyKind::NegBinomial),
            "model4" => ("matern32 + periodic", "rbf", FamilyKind::NegBinomial),
            "model5" => ("matern32 + periodic", "matern32", FamilyKind::Zinb),
            "model6" => ("periodic", "matern32", FamilyKind::NegBinomial),
            other => {
                return Err(Error::domain(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Self::new(name, KernelStructure::new(time, space), family)
    }

    /// Replaces the kernel hyperparameters (natural scale, layout order) and
    /// holds them fixed during sampling.
    pub fn with_fixed_kernel(mut self, values: &[f64]) -> Result<Self> {
        let layout = ParamLayout::of(&self.kernel)?;
        self.kernel = layout.with_constrained(&self.kernel, values)?;
        self.fix_kernel = true;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if self.inducing.stride == 0 {
            return Err(Error::domain("inducing stride must be at least 1"));
        }
        ParamLayout::of(&self.kernel).map(|_| ())
    }

    pub fn kernel_layout(&self) -> ParamLayout {
        ParamLayout::of(&self.kernel).expect("validated at construction")
    }

    /// Number of sampled kernel parameters.
    pub fn n_kernel_params(&self) -> usize {
        if self.fix_kernel {
            0
        } else {
            self.kernel_layout().len()
        }
    }

    /// Names of the sampled non-latent parameters, in sampler order.
    pub fn hyper_names(&self) -> Vec<String> {
        let mut names = if self.fix_kernel {
            Vec::new()
        } else {
            self.kernel_layout().names()
        };
        match self.family {
            FamilyKind::NegBinomial => names.push("phi".into()),
            FamilyKind::Zinb => names.extend(["phi".to_string(), "lambda".to_string()]),
            FamilyKind::Poisson => {}
        }
        names
    }

    /// Kernel at natural-scale hyperparameters `hyper` (as named by
    /// [`hyper_names`](Self::hyper_names)).
    pub fn kernel_from_hyper(&self, hyper: &[f64]) -> Result<KernelExpr> {
        if self.fix_kernel {
            return Ok(self.kernel.clone());
        }
        let layout = self.kernel_layout();
        layout.with_constrained(&self.kernel, &hyper[..layout.len()])
    }

    pub fn family_from_hyper(&self, hyper: &[f64]) -> ObsFamily {
        let k = self.n_kernel_params();
        match self.family {
            FamilyKind::NegBinomial => ObsFamily::NegBinomial { phi: hyper[k] },
            FamilyKind::Zinb => ObsFamily::Zinb {
                phi: hyper[k],
                lambda: hyper[k + 1],
            },
            FamilyKind::Poisson => ObsFamily::Poisson,
        }
    }

    /// Inducing grid over the locations and weeks of `data`.
    pub fn inducing_grid(&self, data: &Dataset) -> Result<InducingGrid> {
        let sites = project_sites(data, self.projection);
        select_inducing_grid(data.weeks(), &sites, self.inducing.stride, self.inducing.include_final)
    }
}

/// Projected `(x, y)` coordinates of every location of `data`.
pub fn project_sites(data: &Dataset, projection: SpatialProjection) -> Vec<(f64, f64)> {
    (0..data.n_locations())
        .map(|i| {
            let c = data.input(data.cell(i, 0), projection);
            (c.coords()[1], c.coords()[2])
        })
        .collect()
}

/// A specification together with its training panel and posterior draws.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub offsets: OffsetTable,
    pub grid: InducingGrid,
    pub samples: PosteriorSamples,
}

impl FittedModel {
    /// Reassembles a fit from stored draws.
    pub fn from_samples(spec: ModelSpec, train: Dataset, samples: PosteriorSamples) -> Result<Self> {
        spec.validate()?;
        let offsets = OffsetTable::from_dataset(&train)?;
        let grid = spec.inducing_grid(&train)?;
        if samples.names != sampler::sample_names(&spec.hyper_names(), grid.len()) {
            return Err(Error::domain(format!(
                "stored draws do not match model `{}` on this panel",
                spec.name
            )));
        }
        Ok(FittedModel {
            spec,
            train,
            offsets,
            grid,
            samples,
        })
    }

    pub fn kernel_at(&self, chain: usize, iter: usize) -> Result<KernelExpr> {
        self.spec.kernel_from_hyper(self.samples.hyper(chain, iter))
    }

    pub fn family_at(&self, chain: usize, iter: usize) -> ObsFamily {
        self.spec.family_from_hyper(self.samples.hyper(chain, iter))
    }

    /// Latent field over every training cell under one draw.
    pub fn train_latent(&self, chain: usize, iter: usize) -> Result<Vec<f64>> {
        let kernel = self.kernel_at(chain, iter)?;
        let cells: Vec<usize> = (0..self.train.n_cells()).collect();
        let xs = self.train.inputs(&cells, self.spec.projection);
        SorProjector::new(&kernel, &self.grid.points, &xs)?.project(self.samples.latent(chain, iter))
    }
}

/// Fits `spec` to `train` by HMC.
pub fn fit(spec: &ModelSpec, train: &Dataset, cfg: &SamplerConfig) -> Result<FittedModel> {
    spec.validate()?;
    cfg.validate()?;
    let offsets = OffsetTable::from_dataset(train)?;
    let grid = spec.inducing_grid(train)?;
    let target = GpPosterior::new(spec, train, &offsets, &grid)?;
    let inits = target.initial_points(cfg);
    let run = sampler::hmc_run(&target, &inits, cfg)?;
    let samples = target.to_samples(&run)?;
    Ok(FittedModel {
        spec: spec.clone(),
        train: train.clone(),
        offsets,
        grid,
        samples,
    })
}
