//! Static-length Hamiltonian Monte Carlo with a diagonal metric.
//!
//! Each iteration draws its leapfrog count uniformly from
//! `[leapfrog_min, leapfrog_max]`. During warmup the step size follows dual
//! averaging towards `target_accept`; the metric is the regularized variance
//! of draws from the middle of warmup, after which step-size adaptation
//! restarts for the remaining warmup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unnormalized log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(z)` and writes its gradient into `grad`.
    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub warmup: usize,
    pub n_samples: usize,
    pub leapfrog_min: usize,
    pub leapfrog_max: usize,
    pub target_accept: f64,
    /// Fixed step size; disables step-size adaptation.
    pub step_size: Option<f64>,
    pub adapt_metric: bool,
    /// Half-width of the uniform jitter applied to initial values.
    pub init_jitter: f64,
    /// Energy error beyond which a trajectory counts as divergent.
    pub max_energy_error: f64,
    pub seed: u64,
    /// Worker threads for running chains; 0 uses one per chain.
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            warmup: 1000,
            n_samples: 1000,
            leapfrog_min: 15,
            leapfrog_max: 20,
            target_accept: 0.8,
            step_size: None,
            adapt_metric: true,
            init_jitter: 0.5,
            max_energy_error: 1000.0,
            seed: 0,
            threads: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::domain("n_chains must be at least 1"));
        }
        if self.warmup == 0 {
            return Err(Error::domain("warmup must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::domain("n_samples must be at least 1"));
        }
        if self.leapfrog_min == 0 || self.leapfrog_min > self.leapfrog_max {
            return Err(Error::domain(format!(
                "leapfrog range [{}, {}] is invalid",
                self.leapfrog_min, self.leapfrog_max
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::domain("target_accept must lie in (0, 1)"));
        }
        if let Some(eps) = self.step_size {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::domain("step_size must be positive"));
            }
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::domain("init_jitter must be non-negative"));
        }
        Ok(())
    }

    fn thread_count(&self) -> usize {
        if self.threads == 0 {
            self.n_chains
        } else {
            self.threads
        }
    }
}

/// Post-warmup output of one chain, on the unconstrained scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    /// Metropolis acceptance probability of each kept iteration.
    pub accept_stats: Vec<f64>,
    /// Hamiltonian error `H(end) - H(start)` of each kept trajectory.
    pub energy_errors: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub divergences: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Step size after every warmup iteration.
    pub warmup_trace: Vec<f64>,
}

impl ChainRun {
    pub fn mean_accept(&self) -> f64 {
        crate::stats::mean(&self.accept_stats)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcRun {
    pub chains: Vec<ChainRun>,
}

/// Runs one chain per initial point in parallel.
///
/// Chain `c` draws from the stream `c` of a ChaCha8 generator seeded with
/// `cfg.seed`, so results do not depend on the thread count.
pub fn hmc_run(target: &dyn LogDensity, inits: &[Vec<f64>], cfg: &SamplerConfig) -> Result<HmcRun> {
    cfg.validate()?;
    if inits.len() != cfg.n_chains {
        return Err(Error::domain(format!(
            "{} initial points for {} chains",
            inits.len(),
            cfg.n_chains
        )));
    }
    if let Some(bad) = inits.iter().find(|z| z.len() != target.dim()) {
        return Err(Error::domain(format!(
            "initial point has {} coordinates, target has {}",
            bad.len(),
            target.dim()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count())
        .build()
        .map_err(|e| Error::domain(format!("cannot start thread pool: {e}")))?;
    let chains = pool.install(|| {
        inits
            .par_iter()
            .enumerate()
            .map(|(c, init)| run_chain(target, init, cfg, c))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(HmcRun { chains })
}

struct State {
    q: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
}

fn evaluate(target: &dyn LogDensity, q: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; q.len()];
    match target.log_density_and_grad(q, &mut grad) {
        Ok(lp) if lp.is_finite() && grad.iter().all(|g| g.is_finite()) => Some((lp, grad)),
        _ => None,
    }
}

struct Transition {
    state: Option<State>,
    accept_prob: f64,
    energy_error: f64,
    divergent: bool,
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

fn draw_momentum(rng: &mut ChaCha8Rng, inv_metric: &[f64]) -> Vec<f64> {
    inv_metric
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn transition(
    target: &dyn LogDensity,
    cur: &State,
    p0: Vec<f64>,
    eps: f64,
    n_steps: usize,
    inv_metric: &[f64],
    max_error: f64,
) -> Transition {
    let h0 = -cur.lp + kinetic(&p0, inv_metric);
    let mut p = p0;
    let mut q = cur.q.clone();
    let mut grad = cur.grad.clone();
    let mut lp = cur.lp;
    for _ in 0..n_steps {
        for (p, g) in p.iter_mut().zip(&grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in q.iter_mut().zip(&p).zip(inv_metric) {
            *q += eps * m * p;
        }
        match evaluate(target, &q) {
            Some((l, g)) => {
                lp = l;
                grad = g;
            }
            None => {
                return Transition {
                    state: None,
                    accept_prob: 0.0,
                    energy_error: f64::INFINITY,
                    divergent: true,
                }
            }
        }
        for (p, g) in p.iter_mut().zip(&grad) {
            *p += 0.5 * eps * g;
        }
    }
    let h1 = -lp + kinetic(&p, inv_metric);
    let err = h1 - h0;
    let divergent = !err.is_finite() || err > max_error;
    let accept_prob = if divergent { 0.0 } else { (-err).exp().min(1.0) };
    Transition {
        state: Some(State { q, lp, grad }),
        accept_prob,
        energy_error: err,
        divergent,
    }
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn reasonable_step_size(
    target: &dyn LogDensity,
    cur: &State,
    inv_metric: &[f64],
    mut eps: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let log_thresh = 0.8f64.ln();
    let log_accept = |eps: f64, rng: &mut ChaCha8Rng| {
        let p = draw_momentum(rng, inv_metric);
        let t = transition(target, cur, p, eps, 1, inv_metric, f64::INFINITY);
        if t.state.is_none() {
            f64::NEG_INFINITY
        } else {
            -t.energy_error
        }
    };
    let first = log_accept(eps, rng);
    let up = first > log_thresh;
    for _ in 0..60 {
        eps = if up { eps * 2.0 } else { eps * 0.5 };
        let la = log_accept(eps, rng);
        if up && la <= log_thresh {
            return eps / 2.0;
        }
        if !up && la > log_thresh {
            return eps;
        }
        if !(1e-12..=1e6).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e6)
}

/// Nesterov dual averaging of the log step size.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn push(&mut self, x: &[f64]) {
        if self.n == 0 {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Sample variance shrunk towards `1e-3`.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

fn run_chain(target: &dyn LogDensity, init: &[f64], cfg: &SamplerConfig, chain: usize) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let dim = target.dim();
    let (lp, grad) = evaluate(target, init).ok_or_else(|| Error::Sampler {
        message: format!("chain {chain}: log density is not finite at the initial point"),
        trace: Vec::new(),
    })?;
    let mut cur = State {
        q: init.to_vec(),
        lp,
        grad,
    };
    let mut inv_metric = vec![1.0; dim];
    let adapt_step = cfg.step_size.is_none();
    let mut eps = match cfg.step_size {
        Some(e) => e,
        None => reasonable_step_size(target, &cur, &inv_metric, 0.1, &mut rng),
    };
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let w = cfg.warmup;
    let window = (w / 2, (w * 17) / 20);
    let mut welford = Welford::default();

    let mut out = ChainRun {
        draws: Vec::with_capacity(cfg.n_samples),
        accept_stats: Vec::with_capacity(cfg.n_samples),
        energy_errors: Vec::with_capacity(cfg.n_samples),
        n_leapfrog: Vec::with_capacity(cfg.n_samples),
        divergences: 0,
        step_size: eps,
        inv_metric: Vec::new(),
        warmup_trace: Vec::with_capacity(w),
    };
    let mut warmup_accepts = 0usize;

    for it in 0..w + cfg.n_samples {
        let n_steps = rng.random_range(cfg.leapfrog_min..=cfg.leapfrog_max);
        let p0 = draw_momentum(&mut rng, &inv_metric);
        let t = transition(target, &cur, p0, eps, n_steps, &inv_metric, cfg.max_energy_error);
        let accepted = match t.state {
            Some(s) if rng.random::<f64>() < t.accept_prob => {
                cur = s;
                true
            }
            _ => false,
        };
        if it < w {
            warmup_accepts += accepted as usize;
            if adapt_step {
                eps = da.update(t.accept_prob);
            }
            if cfg.adapt_metric && it >= window.0 && it < window.1 {
                welford.push(&cur.q);
            }
            if cfg.adapt_metric && it + 1 == window.1 && welford.n >= 10 {
                inv_metric = welford.regularized();
                if adapt_step {
                    eps = reasonable_step_size(target, &cur, &inv_metric, eps, &mut rng);
                    da = DualAveraging::new(eps, cfg.target_accept);
                }
            }
            if adapt_step && it + 1 == w {
                eps = da.final_step();
            }
            out.warmup_trace.push(eps);
            continue;
        }
        out.divergences += t.divergent as usize;
        out.accept_stats.push(t.accept_prob);
        out.energy_errors.push(t.energy_error);
        out.n_leapfrog.push(n_steps);
        out.draws.push(cur.q.clone());
    }
    if warmup_accepts == 0 {
        return Err(Error::Sampler {
            message: format!("chain {chain}: no proposal accepted during {w} warmup iterations"),
            trace: out.warmup_trace,
        });
    }
    out.step_size = eps;
    out.inv_metric = inv_metric;
    Ok(out)
}
