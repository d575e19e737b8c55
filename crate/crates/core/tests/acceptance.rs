//! Acceptance suite. Prints one PASS, FAIL or BLOCKED line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Arguments select criteria by number or by a substring of their name;
//! flags are ignored. With no selection every criterion runs.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use stgp::data::{simulate, train_test_split, Dataset, Location, SimConfig, SimOutput};
use stgp::eval::{
    bayesian_pvalue, bayesian_pvalue_with, build_loglik_matrix, crps_split, forecast_crps, freeman_tukey, loo_estimate,
    ppc_draws, LogLikMatrix,
};
use stgp::forecast::{constant_rate_forecast, forecast, interval_coverage, ForecastOptions};
use stgp::gp::{exact_condition, SorProjector};
use stgp::kernel::{eval_gram_sym, InputPoint, KernelExpr, KernelKind, KernelParams};
use stgp::linalg::JITTER_START;
use stgp::model::{fit, FittedModel, ModelSpec};
use stgp::obs::{mean_counts, nb_logpmf, poisson_logpmf, zinb_logpmf, ObsFamily, OffsetTable};
use stgp::sampler::{gelman_rubin, hmc_run, mcse, summarize, GpPosterior, LogDensity, SamplerConfig};
use stgp::stats::{log_sum_exp, quantiles};
use stgp::Result;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "kernel_psd", kernel_psd),
    (2, "exact_conditioning", exact_conditioning),
    (3, "sor_degeneracy", sor_degeneracy),
    (4, "gradient_check", gradient_check),
    (5, "likelihood_normalization", likelihood_normalization),
    (6, "hmc_gaussian", hmc_gaussian),
    (7, "crps_two_forms", crps_two_forms),
    (8, "loo_oracles", loo_oracles),
    (9, "parameter_recovery", parameter_recovery),
    (10, "forecast_pipeline", forecast_pipeline),
    (11, "unit_examples", unit_examples),
    (12, "chain_speedup", chain_speedup),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: u32, name: &str| {
        filters.is_empty()
            || filters
                .iter()
                .any(|f| f.parse::<u32>().ok() == Some(n) || name.contains(f.as_str()))
    };
    let mut failed = 0;
    for &(n, name, run) in CRITERIA {
        if !selected(n, name) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (status, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Blocked(d) => ("BLOCKED", d),
        };
        println!(
            "criterion {n:>2} {status:<7} {name}: {detail} [{:.1}s]",
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<InputPoint> {
    (0..n)
        .map(|_| InputPoint::new((0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap())
        .collect()
}

fn random_leaf(rng: &mut ChaCha8Rng, id: &mut usize) -> KernelExpr {
    *id += 1;
    let name = format!("k{id}");
    let variance = rng.random_range(0.1..3.0);
    let kinds = [
        KernelKind::Exponential,
        KernelKind::Matern32,
        KernelKind::Rbf,
        KernelKind::Periodic,
    ];
    if rng.random_range(0..5) == 4 {
        return KernelExpr::bias(variance, &name).unwrap();
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let params = KernelParams::new(variance, rng.random_range(0.2..5.0), rng.random_range(1.0..20.0)).unwrap();
    let mut dims: Vec<usize> = (0..3).filter(|_| rng.random_bool(0.5)).collect();
    if dims.is_empty() {
        dims.push(rng.random_range(0..3));
    }
    KernelExpr::base(kind, params, dims, &name).unwrap()
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize, id: &mut usize) -> KernelExpr {
    if depth == 0 || rng.random_bool(0.35) {
        return random_leaf(rng, id);
    }
    let a = random_tree(rng, depth - 1, id);
    let b = random_tree(rng, depth - 1, id);
    if rng.random_bool(0.5) {
        a.sum(b)
    } else {
        a.product(b)
    }
}

fn kernel_psd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for _ in 0..200 {
        let expr = random_tree(&mut rng, 3, &mut 0);
        let n = rng.random_range(1..=30);
        let k = eval_gram_sym(&expr, &random_points(&mut rng, n)).unwrap();
        let eig = SymmetricEigen::new(k).eigenvalues;
        let max = eig.max();
        let scaled = eig.min() / max.max(1.0);
        worst = worst.min(scaled);
        if scaled < -1e-8 {
            bad += 1;
        }
    }
    check(
        bad == 0,
        format!("200 trees, {bad} violations, worst min eigenvalue / max(1, max) {worst:.2e}"),
    )
}

/// Joint-Gaussian conditioning by direct inversion of the jittered training
/// block.
fn brute_condition(
    expr: &KernelExpr,
    xs: &[InputPoint],
    f: &[f64],
    x_star: &[InputPoint],
    m: f64,
    jitter: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut all = xs.to_vec();
    all.extend_from_slice(x_star);
    let joint = eval_gram_sym(expr, &all).unwrap();
    let n = xs.len();
    let ns = x_star.len();
    let mut k11 = joint.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        k11[(i, i)] += jitter;
    }
    let k21 = joint.view((n, 0), (ns, n)).into_owned();
    let k22 = joint.view((n, n), (ns, ns)).into_owned();
    let inv = k11.try_inverse().expect("invertible");
    let resid = DVector::from_iterator(n, f.iter().map(|v| v - m));
    let mean = DVector::from_element(ns, m) + &k21 * &inv * resid;
    let cov = k22 - &k21 * &inv * k21.transpose();
    (mean, cov)
}

fn exact_conditioning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let rel = JITTER_START;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let expr = random_tree(&mut rng, 2, &mut 0);
        let xs = random_points(&mut rng, 8);
        let x_star = random_points(&mut rng, 4);
        let f: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = rng.random_range(-1.0..1.0);
        let got = exact_condition(&expr, &xs, &f, &x_star, m).unwrap();
        let k = eval_gram_sym(&expr, &xs).unwrap();
        let jitter = rel * k.diagonal().mean();
        let (mean, cov) = brute_condition(&expr, &xs, &f, &x_star, m, jitter);
        worst = worst.max((got.mean - mean).amax()).max((got.cov - cov).amax());
    }
    check(worst <= 1e-8, format!("50 instances, max abs error {worst:.2e}"))
}

fn sor_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_full: f64 = 0.0;
    let mut worst_diag = f64::NEG_INFINITY;
    for _ in 0..20 {
        let expr = random_tree(&mut rng, 2, &mut 0);
        let n = rng.random_range(4..=20);
        let xs = random_points(&mut rng, n);
        let k = eval_gram_sym(&expr, &xs).unwrap();
        let q = SorProjector::with_jitter(&expr, &xs, &xs, 1e-12).unwrap().covariance();
        worst_full = worst_full.max((&q - &k).amax());
        let m = rng.random_range(1..n);
        let q = SorProjector::new(&expr, &xs[..m], &xs).unwrap().covariance();
        for i in 0..n {
            worst_diag = worst_diag.max(q[(i, i)] - k[(i, i)]);
        }
    }
    check(
        worst_full <= 1e-8 && worst_diag <= 1e-8,
        format!("M = n max |Q - K| {worst_full:.2e}; M < n max diag(Q - K) {worst_diag:.2e}"),
    )
}

fn toy_panel(n_loc: usize, n_weeks: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations = (0..n_loc)
        .map(|i| Location {
            id: format!("L{i}"),
            lon: rng.random_range(-2.0..0.0),
            lat: rng.random_range(52.0..53.0),
        })
        .collect();
    let n = n_loc * n_weeks;
    let counts = (0..n).map(|_| Some(rng.random_range(0..15u64))).collect();
    let pops = (0..n).map(|_| rng.random_range(1e4..5e4)).collect();
    Dataset::new(locations, (1..=n_weeks as i64).collect(), counts, pops).unwrap()
}

fn gradient_check() -> Outcome {
    let spec = ModelSpec::preset("model2").unwrap();
    let data = toy_panel(2, 4, 404);
    let offsets = OffsetTable::from_dataset(&data).unwrap();
    let grid = spec.inducing_grid(&data).unwrap();
    let target = GpPosterior::new(&spec, &data, &offsets, &grid).unwrap();
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scratch = vec![0.0; d];
    for _ in 0..5 {
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; d];
        target.log_density_and_grad(&z, &mut grad).unwrap();
        for k in 0..d {
            let mut zp = z.clone();
            zp[k] += h;
            let fp = target.log_density_and_grad(&zp, &mut scratch).unwrap();
            zp[k] -= 2.0 * h;
            let fm = target.log_density_and_grad(&zp, &mut scratch).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1.0));
        }
    }
    check(
        worst <= 1e-4,
        format!("{d} coordinates x 5 points, max relative error {worst:.2e}"),
    )
}

fn likelihood_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..10 {
        let mu = rng.random_range(0.1..50.0);
        let phi = rng.random_range(0.05..2.0);
        let pi = rng.random_range(0.0..0.9);
        let nb: f64 = (0..=2000u64).map(|y| nb_logpmf(y, mu, phi).exp()).sum();
        let zinb: f64 = (0..=2000u64).map(|y| zinb_logpmf(y, mu, phi, pi).exp()).sum();
        worst_sum = worst_sum.max((nb - 1.0).abs()).max((zinb - 1.0).abs());
    }
    let mut worst_limit: f64 = 0.0;
    for mu in [0.5, 3.0, 10.0] {
        for y in 0..=20u64 {
            let d = (nb_logpmf(y, mu, 1e-8).exp() - poisson_logpmf(y, mu).exp()).abs();
            worst_limit = worst_limit.max(d);
        }
    }
    check(
        worst_sum <= 1e-8 && worst_limit <= 1e-4,
        format!("max |sum - 1| {worst_sum:.2e}; max |NB - Poisson| at phi 1e-8 {worst_limit:.2e}"),
    )
}

struct StdNormal2;

impl LogDensity for StdNormal2 {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (g, v) in grad.iter_mut().zip(z) {
            *g = -v;
        }
        Ok(-0.5 * z.iter().map(|v| v * v).sum::<f64>())
    }
}

fn hmc_gaussian() -> Outcome {
    let cfg = SamplerConfig {
        n_chains: 4,
        warmup: 1000,
        n_samples: 1000,
        leapfrog_min: 15,
        leapfrog_max: 20,
        seed: 606,
        ..Default::default()
    };
    let inits = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]];
    let a = hmc_run(&StdNormal2, &inits, &cfg).unwrap();
    let b = hmc_run(&StdNormal2, &inits, &cfg).unwrap();
    let same = a.chains.iter().zip(&b.chains).all(|(x, y)| x.draws == y.draws);
    let mut ok = same;
    let mut parts = Vec::new();
    for k in 0..2 {
        let chains: Vec<Vec<f64>> = a
            .chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[k]).collect())
            .collect();
        let all: Vec<f64> = chains.concat();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let se = mcse(&chains);
        let r = gelman_rubin(&chains).unwrap();
        ok &= m.abs() <= 3.0 * se && r < 1.05;
        parts.push(format!("mean[{k}] {m:+.3} (3 MCSE {:.3}) R-hat {r:.3}", 3.0 * se));
    }
    check(ok, format!("{}; deterministic {same}", parts.join(", ")))
}

/// `∫ (F(x) - 1{x >= y})² dx` for an integer-valued distribution given its
/// pmf on `0..`.
fn crps_exact(pmf: impl Fn(u64) -> f64, y: u64) -> f64 {
    let mut cdf = 0.0;
    let mut total = 0.0;
    for k in 0..100_000u64 {
        cdf += pmf(k);
        let step = if k >= y { 1.0 } else { 0.0 };
        total += (cdf - step).powi(2);
        if k > y && 1.0 - cdf < 1e-14 {
            break;
        }
    }
    total
}

fn crps_two_forms() -> Outcome {
    let cases = [
        (3.0, 0.5, 2u64),
        (10.0, 0.2, 4),
        (1.0, 1.0, 0),
        (25.0, 0.1, 40),
        (6.0, 2.0, 6),
    ];
    let replicates = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for (mu, phi, y) in cases {
        let family = ObsFamily::NegBinomial { phi };
        let exact = crps_exact(|k| nb_logpmf(k, mu, phi).exp(), y);
        let est: f64 = (0..replicates)
            .map(|_| {
                let draws: Vec<f64> = (0..1000).map(|_| family.sample(mu, &mut rng) as f64).collect();
                crps_split(&draws, 500, y as f64).unwrap()
            })
            .sum::<f64>()
            / replicates as f64;
        worst = worst.max((est - exact).abs() / exact);
    }
    check(
        worst <= 0.02,
        format!(
            "5 NB cases, {replicates} replicate 500/500 splits each, max relative gap {:.2}%",
            100.0 * worst
        ),
    )
}

fn conjugate_loo() -> (f64, f64, f64) {
    let (tau, theta0, n, s) = (2.0, 0.7, 20, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let noise = Normal::new(theta0, 1.0).unwrap();
    let y: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let total: f64 = y.iter().sum();
    let log_norm = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln());
    let v_post = 1.0 / (1.0 / (tau * tau) + n as f64);
    let post = Normal::new(v_post * total, v_post.sqrt()).unwrap();
    let theta: Vec<f64> = (0..s).map(|_| post.sample(&mut rng)).collect();
    let llm = LogLikMatrix {
        values: theta
            .iter()
            .map(|&t| y.iter().map(|&yi| log_norm(yi, t, 1.0)).collect())
            .collect(),
        chain_ids: (0..s).map(|i| i / (s / 4)).collect(),
    };
    let psis = loo_estimate(&llm).unwrap();
    let v_loo = 1.0 / (1.0 / (tau * tau) + (n - 1) as f64);
    let exact: f64 = y
        .iter()
        .map(|&yi| log_norm(yi, v_loo * (total - yi), v_loo + 1.0))
        .sum();
    let k_max = psis.pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (psis.elpd, exact, k_max)
}

fn small_fit_config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_chains: 4,
        warmup: 1000,
        n_samples: 1000,
        seed,
        ..Default::default()
    }
}

/// Log pointwise predictive density of `cell` under every draw of `fitted`.
fn cell_lpd(fitted: &FittedModel, cell: usize, y: u64) -> f64 {
    let e = fitted.offsets.expected[cell];
    let mut lp = Vec::new();
    for c in 0..fitted.samples.n_chains() {
        for it in 0..fitted.samples.n_iter() {
            let f = fitted.train_latent(c, it).unwrap()[cell];
            let (mu, _) = mean_counts(e, f).unwrap();
            lp.push(fitted.family_at(c, it).logpmf(y, mu));
        }
    }
    log_sum_exp(&lp) - (lp.len() as f64).ln()
}

fn refit_loo() -> (f64, f64) {
    let base = ModelSpec::preset("model2").unwrap();
    let truth = [4.0, 0.6, 1.0, 0.5, 0.3];
    let kernel = base.kernel_layout().with_constrained(&base.kernel, &truth).unwrap();
    let sim = simulate(&SimConfig {
        n_locations: 3,
        n_weeks: 4,
        lon_range: (-2.0, 0.0),
        lat_range: (51.0, 53.0),
        population_range: (5e4, 2e5),
        base_rate: 1e-4,
        kernel,
        family: ObsFamily::NegBinomial { phi: 0.1 },
        seed: 809,
    })
    .unwrap();
    let spec = base.with_fixed_kernel(&truth).unwrap();
    let data = sim.data;
    let full = fit(&spec, &data, &small_fit_config(810)).unwrap();
    let draws = full.samples.n_chains() * full.samples.n_iter();
    let psis = loo_estimate(&build_loglik_matrix(&full, draws).unwrap()).unwrap();
    let mut brute = 0.0;
    for cell in 0..data.n_cells() {
        let mut counts = data.counts().to_vec();
        let y = counts[cell].take().expect("simulated cells are observed");
        let held = Dataset::new(
            data.locations().to_vec(),
            data.weeks().to_vec(),
            counts,
            data.populations().to_vec(),
        )
        .unwrap();
        let refit = fit(&spec, &held, &small_fit_config(811 + cell as u64)).unwrap();
        brute += cell_lpd(&refit, cell, y);
    }
    (psis.elpd, brute)
}

fn loo_oracles() -> Outcome {
    let (psis, exact, k_max) = conjugate_loo();
    let (psis_b, brute) = refit_loo();
    let da = (psis - exact).abs();
    let db = (psis_b - brute).abs();
    check(
        da <= 0.5 && db <= 1.0,
        format!(
            "conjugate: PSIS {psis:.3} vs analytic {exact:.3} (gap {da:.3}, max k {k_max:.2}); \
             12-cell NB: PSIS {psis_b:.3} vs refit {brute:.3} (gap {db:.3})"
        ),
    )
}

const RECOVERY_TRUTH: [f64; 5] = [6.0, 0.6, 1.5, 0.5, 0.3];
const RECOVERY_PHI: f64 = 0.1;

fn recovery_data(seed: u64) -> SimOutput {
    let spec = ModelSpec::preset("model2").unwrap();
    let kernel = spec
        .kernel_layout()
        .with_constrained(&spec.kernel, &RECOVERY_TRUTH)
        .unwrap();
    simulate(&SimConfig {
        n_locations: 10,
        n_weeks: 30,
        lon_range: (-3.0, 0.0),
        lat_range: (51.0, 54.0),
        population_range: (5e4, 5e5),
        base_rate: 1e-4,
        kernel,
        family: ObsFamily::NegBinomial { phi: RECOVERY_PHI },
        seed,
    })
    .unwrap()
}

struct Recovery {
    ok: bool,
    detail: String,
    fit_time: Duration,
}

fn recovery_attempt(seed: u64) -> Recovery {
    let spec = ModelSpec::preset("model2").unwrap();
    let data = recovery_data(seed).data;
    let t = Instant::now();
    let fitted = fit(&spec, &data, &small_fit_config(seed)).unwrap();
    let fit_time = t.elapsed();
    let all = summarize(&fitted.samples, true).unwrap();
    let worst = all.iter().max_by(|a, b| a.rhat.total_cmp(&b.rhat)).unwrap();
    let mut ok = worst.rhat < 1.1;
    let mut parts = vec![format!("seed {seed}: max R-hat {:.3} ({})", worst.rhat, worst.name)];
    for (name, truth) in [
        ("len_space", RECOVERY_TRUTH[2]),
        ("sigma_space", RECOVERY_TRUTH[3]),
        ("phi", RECOVERY_PHI),
    ] {
        let k = fitted.samples.index_of(name).unwrap();
        let draws = fitted.samples.column(k).concat();
        let q = quantiles(&draws, &[0.025, 0.975]);
        let inside = q[0] <= truth && truth <= q[1];
        ok &= inside;
        parts.push(format!("{name} {truth} in [{:.3}, {:.3}] {inside}", q[0], q[1]));
    }
    let (y, draws) = ppc_draws(&fitted, 1000).unwrap();
    let p = bayesian_pvalue(&y, &draws, seed).unwrap().p;
    ok &= (0.05..=0.95).contains(&p);
    parts.push(format!("p-value {p:.3}"));
    Recovery {
        ok,
        detail: parts.join(", "),
        fit_time,
    }
}

fn parameter_recovery() -> Outcome {
    let first = recovery_attempt(1);
    if first.ok {
        return Pass(format!("{} (fit {:.0}s)", first.detail, first.fit_time.as_secs_f64()));
    }
    // one retry with a fresh seed
    let retry = recovery_attempt(2);
    check(
        retry.ok,
        format!("first attempt failed [{}]; retry {}", first.detail, retry.detail),
    )
}

fn forecast_pipeline() -> Outcome {
    let spec = ModelSpec::preset("model2").unwrap();
    let data = recovery_data(1).data;
    let (train, test) = train_test_split(&data, 4).unwrap();
    let fitted = fit(&spec, &train, &small_fit_config(1010)).unwrap();
    let t = Instant::now();
    let opts = ForecastOptions {
        n_draws: 1000,
        seed: 1011,
        ..Default::default()
    };
    let result = forecast(&fitted, &test, &opts).unwrap();
    let coverage = interval_coverage(&result, &test).unwrap();
    let mean_crps = |r| {
        let weeks = forecast_crps(r, &test, 500).unwrap();
        weeks.iter().map(|w| w.1).sum::<f64>() / weeks.len() as f64
    };
    let crps = mean_crps(&result);
    let k = fitted.samples.index_of("phi").unwrap();
    let phi = quantiles(&fitted.samples.column(k).concat(), &[0.5])[0];
    let baseline =
        constant_rate_forecast(&test, fitted.offsets.rate, ObsFamily::NegBinomial { phi }, 1000, 1012).unwrap();
    let base_crps = mean_crps(&baseline);
    check(
        (0.85..=1.0).contains(&coverage) && crps.is_finite() && crps < base_crps,
        format!(
            "coverage {:.1}%, CRPS {crps:.3} vs constant-rate {base_crps:.3}, forecast {:.1}s after fit",
            100.0 * coverage,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn unit_examples() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    expect(
        freeman_tukey(&[3.0, 7.0], &[3.0, 7.0]).unwrap() == 0.0,
        "Freeman-Tukey y = E",
    );
    expect(
        freeman_tukey(&[4.0], &[1.0]).unwrap() == 1.0,
        "Freeman-Tukey [4] vs [1]",
    );
    expect(
        freeman_tukey(&[0.0, 9.0], &[1.0, 4.0]).unwrap() == 2.0,
        "Freeman-Tukey [0, 9] vs [1, 4]",
    );
    let y = vec![3u64, 0, 8, 2];
    let draws: Vec<_> = (0..200)
        .map(|_| stgp::eval::PpcDraw {
            family: ObsFamily::NegBinomial { phi: 0.5 },
            mu: vec![2.0, 1.0, 5.0, 3.0],
        })
        .collect();
    let p = bayesian_pvalue_with(&y, &draws, 0, |_, _| y.clone()).unwrap().p;
    expect(p == 0.0, "p-value with replicates equal to y");

    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut iid =
        |n: usize, mu: f64| -> Vec<f64> { (0..n).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).collect() };
    let c = iid(1000, 0.0);
    let copied = gelman_rubin(&[c.clone(), c.clone(), c.clone(), c]).unwrap();
    expect((0.995..=1.01).contains(&copied), "R-hat of copied chains");
    let split = gelman_rubin(&[iid(1000, 0.0), iid(1000, 10.0)]).unwrap();
    expect(split > 3.0, "R-hat of N(0,1) and N(10,1) chains");
    let fails = (0..20)
        .filter(|_| {
            let chains: Vec<Vec<f64>> = (0..4).map(|_| iid(1000, 0.0)).collect();
            gelman_rubin(&chains).unwrap() >= 1.05
        })
        .count();
    expect(fails <= 1, "R-hat of i.i.d. chains");

    let q = quantiles(&[2.5; 40], &[0.025, 0.5, 0.975]);
    expect(q.iter().all(|&v| v == 2.5), "quantiles of constant draws");
    let ramp: Vec<f64> = (1..=1000).map(f64::from).collect();
    expect(quantiles(&ramp, &[0.5])[0] == 500.5, "median of 1..1000");

    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("9 examples; copied-chain R-hat {copied:.4}, separated {split:.2}, {fails}/20 i.i.d. above 1.05")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn chain_speedup() -> Outcome {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cpus < 4 {
        return Blocked(format!("{cpus} CPU(s) available, the comparison needs at least 4"));
    }
    let spec = ModelSpec::preset("model2").unwrap();
    let data = recovery_data(1).data;
    let time = |threads: usize| {
        let cfg = SamplerConfig {
            threads,
            ..small_fit_config(1)
        };
        let t = Instant::now();
        fit(&spec, &data, &cfg).unwrap();
        t.elapsed().as_secs_f64()
    };
    let parallel = time(4);
    let serial = time(1);
    let ratio = parallel / serial;
    check(
        ratio < 0.6,
        format!("4 threads {parallel:.0}s vs 1 thread {serial:.0}s, ratio {ratio:.2}"),
    )
}
