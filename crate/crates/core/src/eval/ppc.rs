//! Posterior predictive checks with the Freeman-Tukey discrepancy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::ObsFamily;

/// `T = Σ (√y - √E)²`.
pub fn freeman_tukey(y: &[f64], expected: &[f64]) -> Result<f64> {
    if y.len() != expected.len() {
        return Err(Error::domain("observed and expected differ in length"));
    }
    if y.iter().chain(expected).any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("Freeman-Tukey inputs must be non-negative"));
    }
    Ok(y.iter().zip(expected).map(|(y, e)| (y.sqrt() - e.sqrt()).powi(2)).sum())
}

/// One posterior draw as seen by the check: family parameters and the mean
/// `mu` of every observed cell.
#[derive(Clone, Debug)]
pub struct PpcDraw {
    pub family: ObsFamily,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub p: f64,
    pub tukey_obs: Vec<f64>,
    pub tukey_sim: Vec<f64>,
}

/// Bayesian p-value `mean(T_obs > T_sim)` with replicates drawn from the
/// observation family.
pub fn bayesian_pvalue(y: &[u64], draws: &[PpcDraw], seed: u64) -> Result<PValue> {
    bayesian_pvalue_with(y, draws, seed, |d, rng| {
        d.mu.iter().map(|&m| d.family.sample(m, rng)).collect()
    })
}

/// [`bayesian_pvalue`] with a caller-supplied replicate generator.
pub fn bayesian_pvalue_with(
    y: &[u64],
    draws: &[PpcDraw],
    seed: u64,
    mut replicate: impl FnMut(&PpcDraw, &mut ChaCha8Rng) -> Vec<u64>,
) -> Result<PValue> {
    if draws.is_empty() {
        return Err(Error::domain("posterior predictive check needs draws"));
    }
    if draws.len() < 100 {
        log::warn!("Bayesian p-value from only {} draws", draws.len());
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut tukey_obs = Vec::with_capacity(draws.len());
    let mut tukey_sim = Vec::with_capacity(draws.len());
    for (s, d) in draws.iter().enumerate() {
        if d.mu.len() != y.len() {
            return Err(Error::domain("draw does not cover the observed cells"));
        }
        let expected: Vec<f64> = d.mu.iter().map(|&m| d.family.mean(m)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let rep: Vec<f64> = replicate(d, &mut rng).into_iter().map(|v| v as f64).collect();
        tukey_obs.push(freeman_tukey(&yf, &expected)?);
        tukey_sim.push(freeman_tukey(&rep, &expected)?);
    }
    let hits = tukey_obs.iter().zip(&tukey_sim).filter(|(o, s)| o > s).count();
    Ok(PValue {
        p: hits as f64 / draws.len() as f64,
        tukey_obs,
        tukey_sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeman_tukey_examples() {
        assert_eq!(freeman_tukey(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), 0.0);
        assert_eq!(freeman_tukey(&[4.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(freeman_tukey(&[0.0, 9.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert!(freeman_tukey(&[-1.0], &[1.0]).is_err());
        assert!(freeman_tukey(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn freeman_tukey_is_additive_and_order_free() {
        let y = [1.0, 5.0, 0.0, 12.0];
        let e = [2.0, 4.5, 0.3, 9.0];
        let whole = freeman_tukey(&y, &e).unwrap();
        let parts = freeman_tukey(&y[..2], &e[..2]).unwrap() + freeman_tukey(&y[2..], &e[2..]).unwrap();
        assert!((whole - parts).abs() < 1e-12);
        let rev = freeman_tukey(&[12.0, 0.0, 5.0, 1.0], &[9.0, 0.3, 4.5, 2.0]).unwrap();
        assert!((whole - rev).abs() < 1e-12);
    }

    #[test]
    fn replicas_equal_to_data_give_zero() {
        let y = vec![3, 0, 7];
        let draws = vec![
            PpcDraw {
                family: ObsFamily::NegBinomial { phi: 0.4 },
                mu: vec![2.0, 1.0, 5.0],
            };
            120
        ];
        let r = bayesian_pvalue_with(&y, &draws, 0, |_, _| y.clone()).unwrap();
        assert_eq!(r.p, 0.0);
        let r = bayesian_pvalue(&y, &draws, 0).unwrap();
        let mean = r.tukey_obs.iter().zip(&r.tukey_sim).filter(|(o, s)| o > s).count() as f64 / 120.0;
        assert_eq!(r.p, mean);
        assert!((0.0..=1.0).contains(&r.p));
    }
}
