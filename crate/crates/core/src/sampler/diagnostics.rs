//! Convergence diagnostics and posterior summaries.

use serde::{Deserialize, Serialize};

use super::samples::PosteriorSamples;
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, variance};

/// Split-R̂ of one parameter, `chains[c][i]`.
///
/// Each chain is cut in half and the classic potential scale reduction
/// `sqrt(((n-1)/n W + B/n) / W)` is computed over the halves. Returns
/// `+inf` when the within-chain variance is zero.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::domain("R-hat needs at least two chains"));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::domain("R-hat needs at least 10 iterations per chain"));
    }
    let half = n / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[n - half..n]);
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return Ok(f64::INFINITY);
    }
    let hn = half as f64;
    let b = hn * variance(&means);
    let var_plus = (hn - 1.0) / hn * w + b / hn;
    Ok((var_plus / w).sqrt())
}

/// Effective sample size across chains using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n == 0 {
        return 0.0;
    }
    let total = (m * n) as f64;
    if n < 4 {
        return total;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    // biased autocovariance of chain c at lag t
    let acov = |c: usize, t: usize| -> f64 {
        let x = chains[c];
        let mu = means[c];
        (0..n - t).map(|i| (x[i] - mu) * (x[i + t] - mu)).sum::<f64>() / nf
    };
    let acov0: Vec<f64> = (0..m).map(|c| acov(c, 0)).collect();
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&means);
    }
    if !(var_plus > 0.0) {
        return total;
    }
    let rho = |t: usize| -> f64 {
        let a = mean(&(0..m).map(|c| acov(c, t)).collect::<Vec<_>>());
        1.0 - (mean_var - a) / var_plus
    };
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 0;
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if even + odd >= 0.0 {
            rho_hat[t] = even;
            rho_hat[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t] = even;
    }
    // enforce a monotone sequence of pair sums
    let mut t = 0;
    while t + 4 <= max_t {
        let prev = rho_hat[t] + rho_hat[t + 1];
        if rho_hat[t + 2] + rho_hat[t + 3] > prev {
            rho_hat[t + 2] = prev / 2.0;
            rho_hat[t + 3] = prev / 2.0;
        }
        t += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Monte Carlo standard error of the mean.
pub fn mcse(chains: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    variance(&pooled).sqrt() / ess(chains).sqrt()
}

/// Posterior summary of one parameter, pooled over chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Quantiles (linear interpolation), mean, sd, R̂ and ESS of one parameter.
pub fn summarize_param(name: &str, chains: &[Vec<f64>]) -> Result<ParamSummary> {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(Error::domain(format!("no draws for `{name}`")));
    }
    pooled.sort_by(f64::total_cmp);
    let rhat = if chains.len() >= 2 && chains.iter().all(|c| c.len() >= 10) {
        gelman_rubin(chains)?
    } else {
        f64::NAN
    };
    Ok(ParamSummary {
        name: name.into(),
        mean: mean(&pooled),
        sd: variance(&pooled).sqrt(),
        q025: quantile_sorted(&pooled, 0.025),
        q50: quantile_sorted(&pooled, 0.5),
        q975: quantile_sorted(&pooled, 0.975),
        rhat,
        ess: ess(chains),
    })
}

/// Summaries of the non-latent parameters (`latent = false`) or of all of them.
pub fn summarize(samples: &PosteriorSamples, latent: bool) -> Result<Vec<ParamSummary>> {
    let n = if latent { samples.names.len() } else { samples.n_hyper };
    (0..n)
        .map(|k| summarize_param(&samples.names[k], &samples.column(k)))
        .collect()
}

/// Fixed-width table of summaries.
pub fn render_summary(rows: &[ParamSummary]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(9).max(9);
    let mut out = format!(
        "{:<width$} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
        "parameter", "median", "q2.5", "q97.5", "rhat", "ess"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>8.0}\n",
            r.name, r.q50, r.q025, r.q975, r.rhat, r.ess
        ));
    }
    out
}
