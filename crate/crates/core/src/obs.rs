//! Observation model: population offsets, excess risk, and the count
//! likelihoods (negative binomial, zero-inflated negative binomial, Poisson).
//!
//! The negative binomial is parameterized by its mean `mu` and dispersion
//! `phi` through `r = 1 / phi`, `p = r / (mu + r)`, so that the variance is
//! `mu + phi * mu²` and the Poisson law is the `phi -> 0` limit.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::{log_add_exp, logistic};

/// Latent values are clamped to `[-LATENT_CLAMP, LATENT_CLAMP]` before
/// exponentiation.
pub const LATENT_CLAMP: f64 = 30.0;

/// Below this count the log-gamma ratio is summed term by term, which stays
/// exact for very large `r`.
const DIRECT_SUM_MAX: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    #[serde(alias = "nb", alias = "negative_binomial")]
    NegBinomial,
    #[serde(alias = "zinegbinomial", alias = "zero_inflated")]
    Zinb,
    Poisson,
}

impl FamilyKind {
    pub fn label(self) -> &'static str {
        match self {
            FamilyKind::NegBinomial => "negbinomial",
            FamilyKind::Zinb => "zinb",
            FamilyKind::Poisson => "poisson",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negbinomial" | "nb" | "negative_binomial" => Ok(FamilyKind::NegBinomial),
            "zinb" | "zinegbinomial" | "zero_inflated" => Ok(FamilyKind::Zinb),
            "poisson" => Ok(FamilyKind::Poisson),
            other => Err(Error::domain(format!("unknown observation family `{other}`"))),
        }
    }
}

/// An observation family with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObsFamily {
    NegBinomial {
        phi: f64,
    },
    /// `lambda` is the logit of the zero-inflation probability.
    Zinb {
        phi: f64,
        lambda: f64,
    },
    Poisson,
}

impl ObsFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            ObsFamily::NegBinomial { .. } => FamilyKind::NegBinomial,
            ObsFamily::Zinb { .. } => FamilyKind::Zinb,
            ObsFamily::Poisson => FamilyKind::Poisson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ObsFamily::NegBinomial { phi } | ObsFamily::Zinb { phi, .. } if !(phi.is_finite() && phi > 0.0) => Err(
                Error::domain(format!("dispersion phi must be finite and > 0, got {phi}")),
            ),
            ObsFamily::Zinb { lambda, .. } if lambda.is_nan() => Err(Error::domain("zero-inflation logit is NaN")),
            _ => Ok(()),
        }
    }

    /// Probability of a structural zero.
    pub fn zero_inflation(&self) -> f64 {
        match *self {
            ObsFamily::Zinb { lambda, .. } => logistic(lambda),
            _ => 0.0,
        }
    }

    pub fn logpmf(&self, y: u64, mu: f64) -> f64 {
        match *self {
            ObsFamily::NegBinomial { phi } => nb_logpmf(y, mu, phi),
            ObsFamily::Zinb { phi, lambda } => zinb_logpmf(y, mu, phi, logistic(lambda)),
            ObsFamily::Poisson => poisson_logpmf(y, mu),
        }
    }

    /// Expected count given the NB/Poisson mean `mu`.
    pub fn mean(&self, mu: f64) -> f64 {
        (1.0 - self.zero_inflation()) * mu
    }

    /// Draws a count with mean `mu` (before zero inflation).
    ///
    /// The negative binomial is sampled as a Poisson-Gamma mixture with a
    /// unit-mean Gamma(shape `1/phi`) rate multiplier.
    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> u64 {
        let rate = match *self {
            ObsFamily::Poisson => mu,
            ObsFamily::NegBinomial { phi } => mu * unit_gamma(phi, rng),
            ObsFamily::Zinb { phi, lambda } => {
                let pi = logistic(lambda);
                if rng.random::<f64>() < pi {
                    return 0;
                }
                mu * unit_gamma(phi, rng)
            }
        };
        sample_poisson(rate, rng)
    }
}

fn unit_gamma<R: Rng + ?Sized>(phi: f64, rng: &mut R) -> f64 {
    let shape = 1.0 / phi;
    Gamma::new(shape, phi).expect("valid gamma parameters").sample(rng)
}

fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    let draw: f64 = Poisson::new(rate).expect("finite positive poisson rate").sample(rng);
    draw as u64
}

/// Background effects `e = population * R` for every cell of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable {
    /// Crude incidence rate: cases per person-week over the training window.
    pub rate: f64,
    /// `e` per cell, in dataset cell order.
    pub expected: Vec<f64>,
}

impl OffsetTable {
    /// Offsets for `data` with the crude rate estimated from `data` itself.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let (y, p): (Vec<u64>, Vec<f64>) = (0..data.n_cells())
            .filter_map(|c| data.count(c).map(|y| (y, data.population(c))))
            .unzip();
        let rate = crude_rate(&y, &p)?;
        Ok(Self::with_rate(data, rate))
    }

    /// Offsets for `data` under an externally estimated rate.
    pub fn with_rate(data: &Dataset, rate: f64) -> Self {
        OffsetTable {
            rate,
            expected: (0..data.n_cells()).map(|c| data.population(c) * rate).collect(),
        }
    }
}

/// `R = Σ y / Σ p` over matched cells.
pub fn crude_rate(counts: &[u64], populations: &[f64]) -> Result<f64> {
    if counts.len() != populations.len() {
        return Err(Error::domain("counts and populations differ in length"));
    }
    if populations.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::domain("populations must be positive"));
    }
    let total_pop: f64 = populations.iter().sum();
    if !(total_pop > 0.0) {
        return Err(Error::domain("total population is zero"));
    }
    let total: f64 = counts.iter().map(|&y| y as f64).sum();
    if total == 0.0 {
        log::warn!("no cases observed; crude incidence rate is zero and the model is degenerate");
    }
    Ok(total / total_pop)
}

/// Clamps a latent value; the flag reports whether clamping happened.
#[inline]
pub fn clamp_latent(f: f64) -> (f64, bool) {
    if f > LATENT_CLAMP {
        (LATENT_CLAMP, true)
    } else if f < -LATENT_CLAMP {
        (-LATENT_CLAMP, true)
    } else {
        (f, false)
    }
}

/// `mu = e * exp(f)`, with `f` clamped to `±LATENT_CLAMP`. The flag reports
/// clamping.
pub fn mean_counts(e: f64, f: f64) -> Result<(f64, bool)> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::domain(format!("background effect must be positive, got {e}")));
    }
    if f.is_nan() {
        return Err(Error::domain("latent value is NaN"));
    }
    let (fc, clamped) = clamp_latent(f);
    Ok((e * fc.exp(), clamped))
}

/// `ln Γ(y + r) - ln Γ(r)`.
fn ln_rising(y: u64, r: f64) -> f64 {
    if y <= DIRECT_SUM_MAX || r > 1e6 {
        (0..y).map(|k| (r + k as f64).ln()).sum()
    } else {
        ln_gamma(y as f64 + r) - ln_gamma(r)
    }
}

/// `ψ(y + r) - ψ(r)`.
fn digamma_rising(y: u64, r: f64) -> f64 {
    if y <= DIRECT_SUM_MAX || r > 1e6 {
        (0..y).map(|k| 1.0 / (r + k as f64)).sum()
    } else {
        digamma(y as f64 + r) - digamma(r)
    }
}

fn ln_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

/// `r ln p + y ln(1 - p)` with `p = r / (r + mu)`.
fn nb_kernel(y: u64, mu: f64, r: f64) -> f64 {
    let zero_part = -r * (mu / r).ln_1p();
    if y == 0 {
        zero_part
    } else {
        zero_part + y as f64 * (mu.ln() - (r + mu).ln())
    }
}

/// Negative-binomial log pmf with mean `mu` and dispersion `phi`.
pub fn nb_logpmf(y: u64, mu: f64, phi: f64) -> f64 {
    let r = 1.0 / phi;
    ln_rising(y, r) - ln_factorial(y) + nb_kernel(y, mu, r)
}

/// Zero-inflated negative binomial log pmf; `pi` is the structural-zero
/// probability.
pub fn zinb_logpmf(y: u64, mu: f64, phi: f64, pi: f64) -> f64 {
    if y == 0 {
        let r = 1.0 / phi;
        log_add_exp(pi.ln(), (-pi).ln_1p() + nb_kernel(0, mu, r))
    } else {
        (-pi).ln_1p() + nb_logpmf(y, mu, phi)
    }
}

pub fn poisson_logpmf(y: u64, mu: f64) -> f64 {
    if y == 0 {
        -mu
    } else {
        y as f64 * mu.ln() - mu - ln_factorial(y)
    }
}

/// Log-likelihood of one cell and its partial derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellGrad {
    pub ll: f64,
    /// With respect to the latent value `f` (zero when clamped).
    pub d_latent: f64,
    /// With respect to `r = 1 / phi`.
    pub d_r: f64,
    /// With respect to the zero-inflation logit.
    pub d_lambda: f64,
    pub clamped: bool,
}

/// Cell log-likelihood at `mu = e * exp(f)` together with its gradient.
pub fn cell_loglik_grad(y: u64, e: f64, f: f64, family: &ObsFamily) -> CellGrad {
    let (fc, clamped) = clamp_latent(f);
    let mu = e * fc.exp();
    let latent_scale = if clamped { 0.0 } else { 1.0 };
    match *family {
        ObsFamily::Poisson => CellGrad {
            ll: poisson_logpmf(y, mu),
            d_latent: latent_scale * (y as f64 - mu),
            clamped,
            ..CellGrad::default()
        },
        ObsFamily::NegBinomial { phi } => {
            let r = 1.0 / phi;
            let (ll, df, dr) = nb_parts(y, mu, r);
            CellGrad {
                ll,
                d_latent: latent_scale * df,
                d_r: dr,
                d_lambda: 0.0,
                clamped,
            }
        }
        ObsFamily::Zinb { phi, lambda } => {
            let r = 1.0 / phi;
            let pi = logistic(lambda);
            if y == 0 {
                let nb0 = nb_kernel(0, mu, r);
                let ll = log_add_exp(pi.ln(), (-pi).ln_1p() + nb0);
                // responsibility of the count component for the zero
                let w = ((-pi).ln_1p() + nb0 - ll).exp();
                let (_, df, dr) = nb_parts(0, mu, r);
                let q = nb0.exp();
                let d_pi = (1.0 - q) / ll.exp();
                CellGrad {
                    ll,
                    d_latent: latent_scale * w * df,
                    d_r: w * dr,
                    d_lambda: d_pi * pi * (1.0 - pi),
                    clamped,
                }
            } else {
                let (ll, df, dr) = nb_parts(y, mu, r);
                CellGrad {
                    ll: (-pi).ln_1p() + ll,
                    d_latent: latent_scale * df,
                    d_r: dr,
                    d_lambda: -pi,
                    clamped,
                }
            }
        }
    }
}

/// NB log pmf and its derivatives with respect to `log mu` and `r`.
fn nb_parts(y: u64, mu: f64, r: f64) -> (f64, f64, f64) {
    let yf = y as f64;
    let ll = ln_rising(y, r) - ln_factorial(y) + nb_kernel(y, mu, r);
    let d_log_mu = r * (yf - mu) / (r + mu);
    let d_r = digamma_rising(y, r) - (mu / r).ln_1p() + (mu - yf) / (r + mu);
    (ll, d_log_mu, d_r)
}

/// Sum of cell log-likelihoods over the observed cells of `data`.
///
/// `latent` holds one value per dataset cell; missing cells are skipped.
pub fn loglik_dataset(family: &ObsFamily, latent: &[f64], data: &Dataset, offsets: &OffsetTable) -> Result<f64> {
    if latent.len() != data.n_cells() || offsets.expected.len() != data.n_cells() {
        return Err(Error::domain(format!(
            "latent field has {} values, offsets {}, dataset {} cells",
            latent.len(),
            offsets.expected.len(),
            data.n_cells()
        )));
    }
    family.validate()?;
    let mut total = 0.0;
    for c in 0..data.n_cells() {
        if let Some(y) = data.count(c) {
            let (mu, _) = mean_counts(offsets.expected[c], latent[c])?;
            total += family.logpmf(y, mu);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crude_rate_examples() {
        assert_eq!(crude_rate(&[100], &[1e6]).unwrap(), 1e-4);
        assert_eq!(crude_rate(&[0, 0], &[5.0, 7.0]).unwrap(), 0.0);
        assert_eq!(crude_rate(&[1, 2, 3, 4], &[10.0; 4]).unwrap(), 0.25);
        assert!(crude_rate(&[1], &[0.0]).is_err());
        assert!(crude_rate(&[1, 2], &[1.0]).is_err());
    }

    #[test]
    fn mean_counts_examples() {
        assert_eq!(mean_counts(4.0, 0.0).unwrap(), (4.0, false));
        assert!((mean_counts(2.0, 3f64.ln()).unwrap().0 - 6.0).abs() < 1e-14);
        let (mu, clamped) = mean_counts(1.0, -45.0).unwrap();
        assert!(clamped);
        assert!((mu - 9.357_622_968_840_175e-14).abs() < 1e-27);
        assert!(mean_counts(0.0, 1.0).is_err());
    }

    #[test]
    fn nb_closed_form() {
        assert!((nb_logpmf(0, 1.0, 1.0) - 0.5f64.ln()).abs() < 1e-15);
        // y = 2, r = 2, p = 0.5: C(3, 2) 0.5^4 = 3 / 16
        assert!((nb_logpmf(2, 2.0, 0.5) - (3.0f64 / 16.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn zinb_closed_form() {
        assert!((zinb_logpmf(0, 1.0, 1.0, 0.5) - 0.75f64.ln()).abs() < 1e-15);
        for y in 0..30 {
            let a = zinb_logpmf(y, 2.5, 0.4, 1e-12);
            let b = nb_logpmf(y, 2.5, 0.4);
            assert!((a - b).abs() < 1e-9, "y = {y}");
        }
    }

    #[test]
    fn pmf_is_a_probability() {
        for &(mu, phi, pi) in &[(0.1, 0.1, 0.2), (5.0, 2.0, 0.5), (40.0, 0.01, 0.9)] {
            for y in 0..200 {
                for v in [
                    nb_logpmf(y, mu, phi),
                    zinb_logpmf(y, mu, phi, pi),
                    poisson_logpmf(y, mu),
                ] {
                    let p = v.exp();
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let h = 1e-6;
        for family in [
            ObsFamily::Poisson,
            ObsFamily::NegBinomial { phi: 0.3 },
            ObsFamily::Zinb { phi: 0.7, lambda: -0.4 },
        ] {
            for y in [0u64, 1, 3, 80] {
                let (e, f) = (2.3, 0.4);
                let g = cell_loglik_grad(y, e, f, &family);
                let ll = |f: f64, fam: &ObsFamily| cell_loglik_grad(y, e, f, fam).ll;
                assert!((g.ll - family.logpmf(y, e * f.exp())).abs() < 1e-12);
                let fd = (ll(f + h, &family) - ll(f - h, &family)) / (2.0 * h);
                assert!(
                    (fd - g.d_latent).abs() < 1e-6,
                    "{family:?} y={y}: {fd} vs {}",
                    g.d_latent
                );
                match family {
                    ObsFamily::NegBinomial { phi } | ObsFamily::Zinb { phi, .. } => {
                        let r = 1.0 / phi;
                        let with_r = |r: f64| {
                            let fam = match family {
                                ObsFamily::Zinb { lambda, .. } => ObsFamily::Zinb { phi: 1.0 / r, lambda },
                                _ => ObsFamily::NegBinomial { phi: 1.0 / r },
                            };
                            ll(f, &fam)
                        };
                        let fd = (with_r(r + h) - with_r(r - h)) / (2.0 * h);
                        assert!((fd - g.d_r).abs() < 1e-6, "{family:?} y={y}: d_r {fd} vs {}", g.d_r);
                    }
                    ObsFamily::Poisson => {}
                }
                if let ObsFamily::Zinb { phi, lambda } = family {
                    let fd = (ll(
                        f,
                        &ObsFamily::Zinb {
                            phi,
                            lambda: lambda + h,
                        },
                    ) - ll(
                        f,
                        &ObsFamily::Zinb {
                            phi,
                            lambda: lambda - h,
                        },
                    )) / (2.0 * h);
                    assert!((fd - g.d_lambda).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn clamped_latent_has_zero_gradient() {
        let g = cell_loglik_grad(3, 1.0, 40.0, &ObsFamily::NegBinomial { phi: 0.5 });
        assert!(g.clamped);
        assert_eq!(g.d_latent, 0.0);
        assert!(g.ll.is_finite());
    }

    #[test]
    fn structural_zero_probability_one_gives_zeros() {
        let fam = ObsFamily::Zinb {
            phi: 0.5,
            lambda: f64::INFINITY,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..1000).all(|_| fam.sample(7.0, &mut rng) == 0));
    }

    #[test]
    fn poisson_sampler_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| ObsFamily::Poisson.sample(2.0, &mut rng) as f64)
            .collect();
        let m = crate::stats::mean(&draws);
        let mcse = (2.0f64 / n as f64).sqrt();
        assert!((m - 2.0).abs() < 3.0 * mcse, "{m}");
    }

    #[test]
    fn nb_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fam = ObsFamily::NegBinomial { phi: 0.5 };
        let draws: Vec<f64> = (0..1_000_000).map(|_| fam.sample(5.0, &mut rng) as f64).collect();
        let m = crate::stats::mean(&draws);
        let v = crate::stats::variance(&draws);
        assert!((m - 5.0).abs() / 5.0 < 0.01, "mean {m}");
        assert!((v - 17.5).abs() / 17.5 < 0.05, "variance {v}");

        let zi = ObsFamily::Zinb {
            phi: 0.5,
            lambda: 0.3f64.ln() - 0.7f64.ln(),
        };
        let draws: Vec<f64> = (0..1_000_000).map(|_| zi.sample(5.0, &mut rng) as f64).collect();
        let m = crate::stats::mean(&draws);
        assert!((m - 3.5).abs() / 3.5 < 0.01, "zinb mean {m}");
    }

    proptest::proptest! {
        #[test]
        fn pmfs_are_probabilities(y in 0u64..500, mu in 1e-3f64..200.0, phi in 1e-4f64..5.0, pi in 0.0f64..0.99) {
            let nb = nb_logpmf(y, mu, phi);
            proptest::prop_assert!(nb.is_finite() && nb <= 1e-12);
            let zi = zinb_logpmf(y, mu, phi, pi);
            proptest::prop_assert!(zi.is_finite() && zi <= 1e-12);
            proptest::prop_assert!((zinb_logpmf(y, mu, phi, 0.0) - nb).abs() < 1e-12);
            if y == 0 {
                proptest::prop_assert!(zi >= nb - 1e-12);
            }
        }
    }
}
