//! Posterior-predictive count forecasts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{draw_latent, sor_predict, Perturbation};
use crate::model::FittedModel;
use crate::obs::{mean_counts, ObsFamily};
use crate::stats::{mean, quantiles};

/// Predictive draws for one (location, week).
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastCell {
    /// Index into the panel's locations.
    pub location: usize,
    pub week: i64,
    /// Count draws.
    pub counts: Vec<f64>,
    /// Draws of the count mean `e * exp(f)` behind each count.
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub cells: Vec<ForecastCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub location: usize,
    pub week: i64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub mean: f64,
}

impl ForecastResult {
    /// Count quantiles and mean of every cell.
    pub fn summarize(&self) -> Vec<ForecastSummary> {
        self.cells
            .iter()
            .map(|c| {
                let q = quantiles(&c.counts, &[0.025, 0.5, 0.975]);
                ForecastSummary {
                    location: c.location,
                    week: c.week,
                    q025: q[0],
                    q50: q[1],
                    q975: q[2],
                    mean: mean(&c.counts),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastOptions {
    /// Predictive draws per cell.
    pub n_draws: usize,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            n_draws: 1000,
            perturbation: Perturbation::Diagonal,
            seed: 0,
        }
    }
}

/// Panel of the `horizon` weeks after the training window with unknown
/// counts; populations repeat each location's last training week.
pub fn horizon_panel(train: &Dataset, horizon: usize) -> Result<Dataset> {
    if horizon == 0 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    let last = *train
        .weeks()
        .last()
        .ok_or_else(|| Error::domain("empty training panel"))?;
    let nw = train.n_weeks();
    let weeks: Vec<i64> = (1..=horizon as i64).map(|h| last + h).collect();
    let mut pops = Vec::with_capacity(train.n_locations() * horizon);
    for i in 0..train.n_locations() {
        let p = train.population(train.cell(i, nw - 1));
        pops.extend(std::iter::repeat_n(p, horizon));
    }
    Dataset::new(train.locations().to_vec(), weeks, vec![None; pops.len()], pops)
}

/// Posterior-predictive draws at every cell of `target`, whose locations
/// must match the training panel. The training crude rate is reused.
pub fn forecast(fitted: &FittedModel, target: &Dataset, opts: &ForecastOptions) -> Result<ForecastResult> {
    if target.locations() != fitted.train.locations() {
        return Err(Error::domain("forecast panel locations differ from the training panel"));
    }
    if opts.n_draws == 0 {
        return Err(Error::domain("forecast needs at least one draw"));
    }
    let cells: Vec<usize> = (0..target.n_cells()).collect();
    let xs = target.inputs(&cells, fitted.spec.projection);
    let e: Vec<f64> = cells
        .iter()
        .map(|&c| target.population(c) * fitted.offsets.rate)
        .collect();
    let pool = fitted.samples.thinned(opts.n_draws);
    if pool.is_empty() {
        return Err(Error::domain("no posterior draws"));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.n_draws)
        .into_par_iter()
        .map(|k| {
            let (chain, iter) = pool[k % pool.len()];
            let kernel = fitted.kernel_at(chain, iter)?;
            let family = fitted.family_at(chain, iter);
            let pred = sor_predict(
                &kernel,
                &fitted.grid.points,
                fitted.samples.latent(chain, iter),
                &xs,
                opts.perturbation == Perturbation::Full,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let f = draw_latent(&pred, opts.perturbation, &mut rng)?;
            let mut means = Vec::with_capacity(f.len());
            let mut counts = Vec::with_capacity(f.len());
            for (e, f) in e.iter().zip(&f) {
                let (mu, _) = mean_counts(*e, *f)?;
                means.push(mu);
                counts.push(family.sample(mu, &mut rng) as f64);
            }
            Ok((counts, means))
        })
        .collect::<Result<_>>()?;
    Ok(collect_cells(target, &rows))
}

fn collect_cells(target: &Dataset, rows: &[(Vec<f64>, Vec<f64>)]) -> ForecastResult {
    let cells = (0..target.n_cells())
        .map(|c| {
            let (i, j) = target.cell_position(c);
            ForecastCell {
                location: i,
                week: target.weeks()[j],
                counts: rows.iter().map(|r| r.0[c]).collect(),
                means: rows.iter().map(|r| r.1[c]).collect(),
            }
        })
        .collect();
    ForecastResult { cells }
}

/// Forecast that ignores space and time: every cell has mean
/// `population * rate` and counts from `family`.
pub fn constant_rate_forecast(
    target: &Dataset,
    rate: f64,
    family: ObsFamily,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastResult> {
    family.validate()?;
    if !(rate >= 0.0) || n_draws == 0 {
        return Err(Error::domain(
            "baseline needs a non-negative rate and at least one draw",
        ));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_draws)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let means: Vec<f64> = (0..target.n_cells()).map(|c| target.population(c) * rate).collect();
            let counts = means.iter().map(|&m| family.sample(m, &mut rng) as f64).collect();
            (counts, means)
        })
        .collect();
    Ok(collect_cells(target, &rows))
}

/// Share of observed counts in `truth` inside the central 95% interval.
pub fn interval_coverage(result: &ForecastResult, truth: &Dataset) -> Result<f64> {
    check_alignment(result, truth)?;
    let mut hit = 0usize;
    let mut total = 0usize;
    for (c, s) in result.summarize().iter().enumerate() {
        if let Some(y) = truth.count(c) {
            total += 1;
            let y = y as f64;
            hit += (s.q025 <= y && y <= s.q975) as usize;
        }
    }
    if total == 0 {
        return Err(Error::domain("no observed counts to score"));
    }
    Ok(hit as f64 / total as f64)
}

pub(crate) fn check_alignment(result: &ForecastResult, truth: &Dataset) -> Result<()> {
    if result.cells.len() != truth.n_cells() {
        return Err(Error::domain(format!(
            "forecast has {} cells, panel has {}",
            result.cells.len(),
            truth.n_cells()
        )));
    }
    for (c, cell) in result.cells.iter().enumerate() {
        let (i, j) = truth.cell_position(c);
        if cell.location != i || cell.week != truth.weeks()[j] {
            return Err(Error::domain("forecast cells are not aligned with the panel"));
        }
    }
    Ok(())
}
