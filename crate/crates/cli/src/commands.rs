//! The `simulate`, `fit`, `predict`, `evaluate` and `compare` commands.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use stgp::data::{
    export_forecast, load_dataset, simulate, train_test_split, write_dataset, Dataset, ExportFormat, SimConfig,
};
use stgp::eval::{compare_models, render_comparison, score_model, ScoreReport};
use stgp::forecast::{forecast, horizon_panel};
use stgp::model::{fit, FittedModel, ModelSpec};
use stgp::obs::{FamilyKind, ObsFamily};
use stgp::sampler::{render_summary, summarize, PosteriorSamples};

use crate::config::RunConfig;
use crate::manifest::OutDir;
use crate::CliError;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const REPORT_FILE: &str = "report.json";

fn write_text(path: PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|e| CliError::Io { path, source: e })
}

/// Writes a synthetic panel and its true parameters.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.model_spec()?;
    let mut out = OutDir::open(out, cfg)?;
    let layout = spec.kernel_layout();
    let truth = cfg.simulate.kernel_truth(&layout.names())?;
    let kernel = layout.with_constrained(&spec.kernel, &truth)?;
    let s = &cfg.simulate;
    let family = match spec.family {
        FamilyKind::NegBinomial => ObsFamily::NegBinomial { phi: s.phi },
        FamilyKind::Zinb => ObsFamily::Zinb {
            phi: s.phi,
            lambda: s.lambda,
        },
        FamilyKind::Poisson => ObsFamily::Poisson,
    };
    let sim = simulate(&SimConfig {
        n_locations: s.n_locations,
        n_weeks: s.n_weeks,
        lon_range: s.lon_range,
        lat_range: s.lat_range,
        population_range: s.population_range,
        base_rate: s.base_rate,
        kernel,
        family,
        seed: cfg.seed,
    })?;
    write_dataset(&sim.data, &out.path)?;

    let mut params = String::from("parameter,value\n");
    for (name, value) in sim.param_names.iter().zip(&sim.param_values) {
        writeln!(params, "{name},{value:?}").unwrap();
    }
    write_text(out.file("truth.csv"), &params)?;
    let mut latent = String::from("location_id,week,f\n");
    for (c, f) in sim.latent.iter().enumerate() {
        let (i, j) = sim.data.cell_position(c);
        writeln!(latent, "{},{},{f:?}", sim.data.locations()[i].id, sim.data.weeks()[j]).unwrap();
    }
    write_text(out.file("truth_latent.csv"), &latent)?;

    out.manifest.data_hash = Some(sim.data.content_hash());
    out.finish("simulate")?;
    Ok(format!(
        "simulated {} locations x {} weeks ({} cells)\n",
        sim.data.n_locations(),
        sim.data.n_weeks(),
        sim.data.n_cells()
    ))
}

/// Loads the configured panel and splits off the held-out weeks.
fn load_split(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let d = &cfg.data;
    let data = load_dataset(&d.counts, &d.locations, &d.population)?;
    Ok(train_test_split(&data, d.holdout)?)
}

/// Fits the configured model and writes draws, the summary table and the
/// R-hat report. Returns a convergence error (after writing) if any R-hat
/// reaches the threshold.
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.model_spec()?;
    let scfg = cfg.sampler_config();
    let mut out = OutDir::open(out, cfg)?;
    let (train, _) = load_split(cfg)?;
    log::info!(
        "fitting {} to {} cells with {} chains",
        spec.name,
        train.n_cells(),
        scfg.n_chains
    );
    let fitted = fit(&spec, &train, &scfg)?;
    fitted.samples.write_csv(&out.file(SAMPLES_FILE))?;

    let hyper = summarize(&fitted.samples, false)?;
    let mut summary = render_summary(&hyper);
    summary.push_str("\nchain  accept  step_size  divergences\n");
    for (c, s) in fitted.samples.stats.iter().enumerate() {
        writeln!(
            summary,
            "{:>5}  {:>6.3}  {:>9.5}  {:>11}",
            c + 1,
            s.accept_rate,
            s.step_size,
            s.divergences
        )
        .unwrap();
    }
    write_text(out.file("summary.txt"), &summary)?;

    let all = summarize(&fitted.samples, true)?;
    let mut rhat = String::from("parameter,rhat,ess\n");
    for r in &all {
        writeln!(rhat, "{},{},{}", r.name, r.rhat, r.ess).unwrap();
    }
    write_text(out.file("rhat.csv"), &rhat)?;

    out.manifest.data_hash = Some(train.content_hash());
    out.manifest.train_weeks = Some((train.weeks()[0], *train.weeks().last().expect("non-empty")));
    out.finish("fit")?;

    let threshold = cfg.convergence.rhat_threshold;
    let bad: Vec<String> = all
        .iter()
        .filter(|r| !(r.rhat < threshold))
        .map(|r| format!("{} ({:.3})", r.name, r.rhat))
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Convergence {
            threshold,
            params: bad,
            summary,
        });
    }
    Ok(summary)
}

/// Rebuilds the fitted model from the draws in `out`.
fn reload(spec: ModelSpec, out: &OutDir, train: Dataset) -> Result<FittedModel, CliError> {
    out.require("fit")?;
    if out.manifest.data_hash.as_deref() != Some(train.content_hash().as_str()) {
        return Err(CliError::Manifest(
            "the training panel changed since the fit; refit into a new directory".into(),
        ));
    }
    let samples = PosteriorSamples::read_csv(&out.file(SAMPLES_FILE), spec.hyper_names().len())?;
    Ok(FittedModel::from_samples(spec, train, samples)?)
}

/// Forecasts the `horizon` weeks after the training window.
pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.model_spec()?;
    let mut out = OutDir::open(out, cfg)?;
    let (train, test) = load_split(cfg)?;
    let fitted = reload(spec, &out, train)?;
    let horizon = cfg.forecast.horizon;
    // held-out weeks carry their own populations
    let target = if horizon <= test.n_weeks() {
        test.select_weeks(0..horizon)
    } else {
        horizon_panel(&fitted.train, horizon)?
    };
    let result = forecast(&fitted, &target, &cfg.forecast_options())?;
    let path = out.file("forecast.csv");
    let f = File::create(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    export_forecast(&result, target.locations(), ExportFormat::Csv, BufWriter::new(f))?;
    if cfg.forecast.geojson {
        let path = out.file("forecast.geojson");
        let f = File::create(&path).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        export_forecast(&result, target.locations(), ExportFormat::GeoJson, BufWriter::new(f))?;
    }
    out.finish("predict")?;
    Ok(format!(
        "forecast {} locations x {} weeks ({} draws per cell)\n",
        target.n_locations(),
        target.n_weeks(),
        cfg.forecast.n_draws
    ))
}

/// Scores the fit: PSIS-LOO, the Freeman-Tukey p-value, and CRPS on the
/// held-out weeks.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.model_spec()?;
    let mut out = OutDir::open(out, cfg)?;
    let (train, test) = load_split(cfg)?;
    if test.n_weeks() == 0 {
        return Err(CliError::Config(
            "evaluate needs held-out weeks; set data.holdout".into(),
        ));
    }
    let last = *train.weeks().last().expect("non-empty");
    if out.manifest.train_weeks.is_some_and(|(_, l)| l != last) || test.weeks()[0] <= last {
        return Err(CliError::Manifest(
            "held-out panel does not follow the fitted training window".into(),
        ));
    }
    let fitted = reload(spec, &out, train)?;
    let report = score_model(&fitted, &test, &cfg.eval_options())?;
    write_text(out.file("score.csv"), &report.to_csv())?;
    write_text(out.file("crps_by_week.csv"), &report.crps_by_week_csv())?;
    let text = report.to_text();
    write_text(out.file("score.txt"), &text)?;
    report.write_json(&out.file(REPORT_FILE))?;
    out.finish("evaluate")?;
    Ok(text)
}

/// Ranks evaluated runs by looic. Each input is a report file or a run
/// directory holding one.
pub fn cmd_compare(inputs: &[PathBuf], out: &Path) -> Result<String, CliError> {
    let reports = inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join(REPORT_FILE) } else { p.clone() };
            Ok(ScoreReport::read_json(&file)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let ranked = compare_models(&reports)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut csv = String::from("rank,model,looic,elpd,crps,bayes_p\n");
    for (k, r) in ranked.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            k + 1,
            r.model,
            r.looic,
            r.elpd,
            r.crps,
            r.bayes_p
        )
        .unwrap();
    }
    write_text(out.join("comparison.csv"), &csv)?;
    let table = render_comparison(&ranked);
    write_text(out.join("comparison.txt"), &table)?;
    Ok(table)
}
