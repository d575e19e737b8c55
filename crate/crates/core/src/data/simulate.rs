use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Location, SpatialProjection};
use crate::error::{Error, Result};
use crate::kernel::{eval_gram_sym, KernelExpr, ParamLayout};
use crate::linalg::JitteredCholesky;
use crate::obs::{mean_counts, ObsFamily};

/// Settings for drawing a synthetic panel from the generative model.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_locations: usize,
    pub n_weeks: usize,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    /// Static populations are drawn uniformly (and rounded) from this range.
    pub population_range: (f64, f64),
    /// Cases per person-week at zero latent field.
    pub base_rate: f64,
    /// Kernel with its true hyperparameters.
    pub kernel: KernelExpr,
    pub family: ObsFamily,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub data: Dataset,
    /// True latent field, one value per cell.
    pub latent: Vec<f64>,
    /// Free parameter names (kernel layout, then `phi`, then `lambda`).
    pub param_names: Vec<String>,
    /// True values on the natural scale.
    pub param_values: Vec<f64>,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n_locations == 0 || self.n_weeks == 0 {
            return Err(Error::domain("simulation needs at least one location and one week"));
        }
        let (plo, phi) = self.population_range;
        if !(plo > 0.0 && phi >= plo && phi.is_finite()) {
            return Err(Error::domain(format!("invalid population range ({plo}, {phi})")));
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(Error::domain("base rate must be positive"));
        }
        for (lo, hi) in [self.lon_range, self.lat_range] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::domain(format!("invalid coordinate range ({lo}, {hi})")));
            }
        }
        self.family.validate()
    }
}

/// Draws locations, populations, a latent field from the exact GP prior (full
/// Gram) and counts from the observation family.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let locations: Vec<Location> = (0..cfg.n_locations)
        .map(|i| Location {
            id: format!("L{:03}", i + 1),
            lon: rng.random_range(cfg.lon_range.0..=cfg.lon_range.1),
            lat: rng.random_range(cfg.lat_range.0..=cfg.lat_range.1),
        })
        .collect();
    let weeks: Vec<i64> = (1..=cfg.n_weeks as i64).collect();
    let (plo, phi) = cfg.population_range;
    let loc_pops: Vec<f64> = (0..cfg.n_locations)
        .map(|_| rng.random_range(plo..=phi).round().max(1.0))
        .collect();
    let n = cfg.n_locations * cfg.n_weeks;
    let pops: Vec<f64> = (0..n).map(|c| loc_pops[c / cfg.n_weeks]).collect();
    let skeleton = Dataset::new(locations, weeks, vec![None; n], pops)?;

    let cells: Vec<usize> = (0..n).collect();
    let xs = skeleton.inputs(&cells, SpatialProjection::Degrees);
    let gram = eval_gram_sym(&cfg.kernel, &xs)?;
    let chol = JitteredCholesky::new(&gram)?;
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let f = &chol.l * z;
    let latent: Vec<f64> = f.iter().copied().collect();

    let mut counts = Vec::with_capacity(n);
    for c in 0..n {
        let (mu, _) = mean_counts(skeleton.population(c) * cfg.base_rate, latent[c])?;
        counts.push(Some(cfg.family.sample(mu, &mut rng)));
    }
    let data = Dataset::new(
        skeleton.locations().to_vec(),
        skeleton.weeks().to_vec(),
        counts,
        skeleton.populations().to_vec(),
    )?;

    let layout = ParamLayout::of(&cfg.kernel)?;
    let mut param_names = layout.names();
    let mut param_values = layout.constrained(&cfg.kernel);
    match cfg.family {
        ObsFamily::NegBinomial { phi } => {
            param_names.push("phi".into());
            param_values.push(phi);
        }
        ObsFamily::Zinb { phi, lambda } => {
            param_names.extend(["phi".to_string(), "lambda".to_string()]);
            param_values.extend([phi, lambda]);
        }
        ObsFamily::Poisson => {}
    }
    Ok(SimOutput {
        data,
        latent,
        param_names,
        param_values,
    })
}
