//! Leave-one-out cross-validation by Pareto-smoothed importance sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ess;
use crate::stats::{log_sum_exp, mean, variance};

/// Pointwise log-likelihood draws: `values[s][n]` for draw `s`, cell `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikMatrix {
    pub values: Vec<Vec<f64>>,
    /// Chain of each draw (0-based).
    pub chain_ids: Vec<usize>,
}

impl LogLikMatrix {
    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn n_cells(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    fn column(&self, n: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[n]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd: f64,
    pub looic: f64,
    /// Standard error of `elpd` over cells.
    pub se_elpd: f64,
    pub pointwise: Vec<f64>,
    /// Pareto shape of each cell's importance-ratio tail (`inf` when no tail
    /// was fitted).
    pub pareto_k: Vec<f64>,
    pub r_eff: Vec<f64>,
}

/// Generalized Pareto fit by the Zhang-Stephens profile-likelihood method
/// with a weakly informative adjustment of the shape. `x` must be ascending
/// and positive. Returns `(k, sigma)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let x_star = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star)
        .collect();
    let profile = |t: f64| {
        let k = mean(&x.iter().map(|xi| (-t * xi).ln_1p()).collect::<Vec<_>>());
        n as f64 * ((-t / k).ln() - k - 1.0)
    };
    let l_theta: Vec<f64> = theta.iter().map(|&t| profile(t)).collect();
    let norm = log_sum_exp(&l_theta);
    let theta_hat: f64 = theta.iter().zip(&l_theta).map(|(t, l)| t * (l - norm).exp()).sum();
    let k = mean(&x.iter().map(|xi| (-theta_hat * xi).ln_1p()).collect::<Vec<_>>());
    let sigma = -k / theta_hat;
    let nf = n as f64;
    let k = k * nf / (nf + 10.0) + 10.0 * 0.5 / (nf + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

/// Generalized Pareto quantile function.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NAN;
    }
    sigma * (-k * (-p).ln_1p()).exp_m1() / k
}

/// Pareto-smoothed log weights (normalized) for log importance ratios, and
/// the fitted shape.
pub fn psis_smooth(log_ratios: &[f64], r_eff: f64) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64 / r_eff).sqrt()).ceil() as usize;
    let mut k_hat = f64::INFINITY;
    if tail_len >= 5 && tail_len < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail = &order[s - tail_len..];
        let tail_vals: Vec<f64> = tail.iter().map(|&i| lw[i]).collect();
        if (tail_vals[tail_len - 1] - tail_vals[0]).abs() >= f64::EPSILON / 100.0 {
            let cutoff = lw[order[s - tail_len - 1]];
            let exp_cut = cutoff.exp();
            let excess: Vec<f64> = tail_vals.iter().map(|v| v.exp() - exp_cut).collect();
            let (k, sigma) = gpd_fit(&excess);
            if k.is_finite() {
                for (j, &i) in tail.iter().enumerate() {
                    let p = (j as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, k, sigma) + exp_cut).ln();
                }
            }
            k_hat = k;
        }
        for w in &mut lw {
            if *w > 0.0 {
                *w = 0.0;
            }
        }
    } else {
        log::warn!("importance-ratio tail of {tail_len} draws is too short to smooth; truncating instead");
        // truncated importance sampling: cap weights at sqrt(S) times their mean
        let cap = log_sum_exp(&lw) - (s as f64).ln() + 0.5 * (s as f64).ln();
        for w in &mut lw {
            *w = w.min(cap);
        }
    }
    let norm = log_sum_exp(&lw);
    for w in &mut lw {
        *w -= norm;
    }
    (lw, k_hat)
}

/// Relative efficiency of `exp(ll)` for each cell, from its multi-chain
/// effective sample size.
pub fn relative_eff(llm: &LogLikMatrix) -> Vec<f64> {
    let s = llm.n_draws();
    let n_chains = llm.chain_ids.iter().max().map_or(1, |m| m + 1);
    (0..llm.n_cells())
        .map(|n| {
            let mut chains = vec![Vec::new(); n_chains];
            for (row, &c) in llm.values.iter().zip(&llm.chain_ids) {
                chains[c].push(row[n].exp());
            }
            chains.retain(|c| !c.is_empty());
            let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
            if !(variance(&pooled) > 0.0) {
                return 1.0;
            }
            (ess(&chains) / s as f64).clamp(1e-3, f64::MAX)
        })
        .collect()
}

/// PSIS-LOO estimate of the expected log pointwise predictive density.
pub fn loo_estimate(llm: &LogLikMatrix) -> Result<LooResult> {
    let s = llm.n_draws();
    if s < 2 || llm.n_cells() == 0 {
        return Err(Error::domain("LOO needs at least two draws and one cell"));
    }
    if llm.chain_ids.len() != s || llm.values.iter().any(|r| r.len() != llm.n_cells()) {
        return Err(Error::domain("log-likelihood matrix is ragged"));
    }
    if llm.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("log-likelihood matrix has non-finite entries"));
    }
    if s < 100 {
        log::warn!("only {s} draws for PSIS-LOO; estimates will be noisy");
    }
    let r_eff = relative_eff(llm);
    let mut pointwise = Vec::with_capacity(llm.n_cells());
    let mut pareto_k = Vec::with_capacity(llm.n_cells());
    for n in 0..llm.n_cells() {
        let ll = llm.column(n);
        let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
        let (lw, k) = psis_smooth(&ratios, r_eff[n]);
        let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
        pointwise.push(log_sum_exp(&terms));
        pareto_k.push(k);
    }
    let elpd: f64 = pointwise.iter().sum();
    let se_elpd = (pointwise.len() as f64 * variance(&pointwise)).sqrt();
    Ok(LooResult {
        elpd,
        looic: -2.0 * elpd,
        se_elpd,
        pointwise,
        pareto_k,
        r_eff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_draws_give_pointwise_loglik() {
        let row = vec![-1.5, -0.2, -3.0];
        let llm = LogLikMatrix {
            values: vec![row.clone(); 200],
            chain_ids: (0..200).map(|s| s / 50).collect(),
        };
        let r = loo_estimate(&llm).unwrap();
        for (a, b) in r.pointwise.iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((r.looic + 2.0 * r.elpd).abs() < 1e-12);
    }

    #[test]
    fn weights_normalize_and_bound_elpd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nrm = Normal::new(-1.0, 0.7).unwrap();
        let ll: Vec<f64> = (0..400).map(|_| nrm.sample(&mut rng)).collect();
        let (lw, k) = psis_smooth(&ll.iter().map(|v| -v).collect::<Vec<_>>(), 1.0);
        let total: f64 = lw.iter().map(|w| w.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(k.is_finite());
        let llm = LogLikMatrix {
            values: ll.iter().map(|&v| vec![v]).collect(),
            chain_ids: vec![0; 400],
        };
        let r = loo_estimate(&llm).unwrap();
        let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.pointwise[0] <= max);
    }

    #[test]
    fn gpd_fit_recovers_shape() {
        // exact GPD quantiles at evenly spaced probabilities
        let (k, sigma) = (0.4, 1.3);
        let x: Vec<f64> = (1..=2000)
            .map(|i| gpd_quantile((i as f64 - 0.5) / 2000.0, k, sigma))
            .collect();
        let (kh, sh) = gpd_fit(&x);
        assert!((kh - k).abs() < 0.05, "{kh}");
        assert!((sh / sigma - 1.0).abs() < 0.1, "{sh}");
    }

    #[test]
    fn short_tails_fall_back() {
        let ll: Vec<f64> = (0..10).map(|i| -(i as f64) * 0.3).collect();
        let (lw, k) = psis_smooth(&ll, 1.0);
        assert!(k.is_infinite());
        let total: f64 = lw.iter().map(|w| w.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
