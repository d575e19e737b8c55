//! Model checking and comparison: PSIS-LOO, Freeman-Tukey Bayesian p-values,
//! CRPS, and ranked score tables.

mod crps;
mod loo;
mod ppc;

pub use crps::{average_by_week, crps_empirical, crps_split, mean_abs_diff};
pub use loo::{gpd_fit, gpd_quantile, loo_estimate, psis_smooth, relative_eff, LogLikMatrix, LooResult};
pub use ppc::{bayesian_pvalue, bayesian_pvalue_with, freeman_tukey, PValue, PpcDraw};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forecast::{check_alignment, forecast, ForecastOptions, ForecastResult};
use crate::model::FittedModel;
use crate::obs::mean_counts;

/// Per-cell log-likelihoods of the observed training cells for `s` draws
/// strided evenly over the pooled chains.
pub fn build_loglik_matrix(fitted: &FittedModel, s: usize) -> Result<LogLikMatrix> {
    let draws = fitted.samples.thinned(s);
    if draws.len() < s {
        return Err(Error::domain(format!(
            "{s} draws requested but only {} available",
            draws.len()
        )));
    }
    let cells = fitted.train.observed_cells();
    let mut values = Vec::with_capacity(s);
    let mut chain_ids = Vec::with_capacity(s);
    for &(chain, iter) in &draws {
        let f = fitted.train_latent(chain, iter)?;
        let family = fitted.family_at(chain, iter);
        let row = cells
            .iter()
            .map(|&c| {
                let (mu, _) = mean_counts(fitted.offsets.expected[c], f[c])?;
                Ok(family.logpmf(fitted.train.count(c).expect("observed"), mu))
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
        chain_ids.push(chain);
    }
    Ok(LogLikMatrix { values, chain_ids })
}

/// Posterior draws of the family and cell means over the observed training
/// cells, for predictive checks.
pub fn ppc_draws(fitted: &FittedModel, s: usize) -> Result<(Vec<u64>, Vec<PpcDraw>)> {
    let cells = fitted.train.observed_cells();
    let y = cells
        .iter()
        .map(|&c| fitted.train.count(c).expect("observed"))
        .collect();
    let draws = fitted
        .samples
        .thinned(s)
        .into_iter()
        .map(|(chain, iter)| {
            let f = fitted.train_latent(chain, iter)?;
            let mu = cells
                .iter()
                .map(|&c| mean_counts(fitted.offsets.expected[c], f[c]).map(|m| m.0))
                .collect::<Result<Vec<f64>>>()?;
            Ok(PpcDraw {
                family: fitted.family_at(chain, iter),
                mu,
            })
        })
        .collect::<Result<_>>()?;
    Ok((y, draws))
}

/// Per-cell CRPS of a forecast against the observed counts of `truth`, with
/// each cell's draws split into `first` and the rest. Returns
/// `(week, score)` for every observed cell.
pub fn forecast_crps(result: &ForecastResult, truth: &Dataset, first: usize) -> Result<Vec<(i64, f64)>> {
    check_alignment(result, truth)?;
    let mut out = Vec::new();
    for (c, cell) in result.cells.iter().enumerate() {
        if let Some(y) = truth.count(c) {
            out.push((cell.week, crps_split(&cell.counts, first, y as f64)?));
        }
    }
    Ok(out)
}

/// Scoring settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Posterior draws in the log-likelihood matrix.
    pub loo_draws: usize,
    /// Posterior draws in the predictive check.
    pub ppc_draws: usize,
    /// Draws in the first half of each CRPS split.
    pub crps_split: usize,
    pub forecast: ForecastOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            loo_draws: 200,
            ppc_draws: 1000,
            crps_split: 500,
            forecast: ForecastOptions::default(),
            seed: 0,
        }
    }
}

/// Scores of one fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: String,
    /// Content hash of the training panel.
    pub data_hash: String,
    pub elpd: f64,
    pub looic: f64,
    pub se_elpd: f64,
    pub pareto_k: Vec<f64>,
    pub crps_by_week: BTreeMap<i64, f64>,
    pub crps: f64,
    /// Freeman-Tukey Bayesian p-value.
    pub bayes_p: f64,
    pub tukey_obs: Vec<f64>,
    pub tukey_sim: Vec<f64>,
}

/// LOO, predictive check and held-out CRPS for `fitted` and the panel `test`.
pub fn score_model(fitted: &FittedModel, test: &Dataset, opts: &EvalOptions) -> Result<ScoreReport> {
    let llm = build_loglik_matrix(fitted, opts.loo_draws)?;
    let loo = loo_estimate(&llm)?;
    let (y, draws) = ppc_draws(fitted, opts.ppc_draws)?;
    let pv = bayesian_pvalue(&y, &draws, opts.seed)?;
    let fc = forecast(fitted, test, &opts.forecast)?;
    let cells = forecast_crps(&fc, test, opts.crps_split)?;
    if cells.is_empty() {
        return Err(Error::domain("held-out panel has no observed counts"));
    }
    let crps_by_week = average_by_week(&cells);
    let crps = crps_by_week.values().sum::<f64>() / crps_by_week.len() as f64;
    Ok(ScoreReport {
        model: fitted.spec.name.clone(),
        data_hash: fitted.train.content_hash(),
        elpd: loo.elpd,
        looic: loo.looic,
        se_elpd: loo.se_elpd,
        pareto_k: loo.pareto_k,
        crps_by_week,
        crps,
        bayes_p: pv.p,
        tukey_obs: pv.tukey_obs,
        tukey_sim: pv.tukey_sim,
    })
}

impl ScoreReport {
    pub fn max_pareto_k(&self) -> f64 {
        self.pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// One-line CSV with a header.
    pub fn to_csv(&self) -> String {
        format!(
            "model,looic,elpd,se_elpd,crps,bayes_p,max_pareto_k,data_hash\n{},{},{},{},{},{},{},{}\n",
            self.model,
            self.looic,
            self.elpd,
            self.se_elpd,
            self.crps,
            self.bayes_p,
            self.max_pareto_k(),
            self.data_hash
        )
    }

    pub fn crps_by_week_csv(&self) -> String {
        let mut out = String::from("week,crps\n");
        for (w, s) in &self.crps_by_week {
            out.push_str(&format!("{w},{s}\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "model            {}\nlooic            {:.2}\nelpd             {:.2} (se {:.2})\nCRPS (mean)      {:.4}\nbayes_p (Freeman-Tukey) {:.3}\nmax pareto k     {:.3}\n",
            self.model,
            self.looic,
            self.elpd,
            self.se_elpd,
            self.crps,
            self.bayes_p,
            self.max_pareto_k()
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(f)?)
    }
}

/// Orders reports by looic (ascending, ties keep their input order). All
/// reports must come from the same training panel.
pub fn compare_models(reports: &[ScoreReport]) -> Result<Vec<ScoreReport>> {
    if reports.len() < 2 {
        return Err(Error::domain("comparison needs at least two reports"));
    }
    if let Some(r) = reports.iter().find(|r| r.data_hash != reports[0].data_hash) {
        return Err(Error::domain(format!(
            "report `{}` was computed on a different dataset than `{}`",
            r.model, reports[0].model
        )));
    }
    let mut out = reports.to_vec();
    out.sort_by(|a, b| a.looic.total_cmp(&b.looic));
    Ok(out)
}

/// Fixed-width comparison table.
pub fn render_comparison(ranked: &[ScoreReport]) -> String {
    let width = ranked.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$} {:>10} {:>10} {:>8}\n", "model", "looic", "crps", "bayes_p");
    for r in ranked {
        out.push_str(&format!(
            "{:<width$} {:>10.2} {:>10.4} {:>8.3}\n",
            r.model, r.looic, r.crps, r.bayes_p
        ));
    }
    out
}
