//! Prior densities on the unconstrained scale.
//!
//! Every positive parameter is sampled as `z = log(x)`; the returned
//! log-densities include the `log |dx/dz| = z` Jacobian and their derivatives
//! are with respect to `z`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, InverseGamma, Normal};

use crate::error::{Error, Result};

/// Hyperparameters of the prior family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Lengthscales ~ InvGamma(shape, scale).
    pub lengthscale_shape: f64,
    pub lengthscale_scale: f64,
    /// Kernel standard deviations ~ HalfNormal(0, sd).
    pub kernel_sd: f64,
    /// Bias variance ~ HalfNormal(0, sd).
    pub bias_sd: f64,
    /// `1/sqrt(phi)` ~ HalfNormal(0, sd).
    pub inv_sqrt_phi_sd: f64,
    /// Zero-inflation logit ~ Normal(mean, sd).
    pub lambda_mean: f64,
    pub lambda_sd: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            lengthscale_shape: 5.0,
            lengthscale_scale: 5.0,
            kernel_sd: 1.0,
            bias_sd: 1.0,
            inv_sqrt_phi_sd: 1.0,
            lambda_mean: -1.0,
            lambda_sd: 5.0,
        }
    }
}

const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lengthscale_shape", self.lengthscale_shape),
            ("lengthscale_scale", self.lengthscale_scale),
            ("kernel_sd", self.kernel_sd),
            ("bias_sd", self.bias_sd),
            ("inv_sqrt_phi_sd", self.inv_sqrt_phi_sd),
            ("lambda_sd", self.lambda_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("prior {name} must be positive, got {v}")));
            }
        }
        if !self.lambda_mean.is_finite() {
            return Err(Error::domain("prior lambda_mean must be finite"));
        }
        Ok(())
    }

    /// Inverse-gamma lengthscale prior at `z = log l`.
    pub fn lengthscale(&self, z: f64) -> (f64, f64) {
        let l = z.exp();
        let (a, b) = (self.lengthscale_shape, self.lengthscale_scale);
        let lp = InverseGamma::new(a, b).expect("validated prior").ln_pdf(l) + z;
        (lp, -(a + 1.0) + b / l + 1.0)
    }

    /// Half-normal prior with scale `sd` on `x = exp(z)`.
    pub fn half_normal(sd: f64, z: f64) -> (f64, f64) {
        let x = z.exp();
        let lp = std::f64::consts::LN_2 + Normal::new(0.0, sd).expect("validated prior").ln_pdf(x) + z;
        (lp, -x * x / (sd * sd) + 1.0)
    }

    pub fn kernel_sigma(&self, z: f64) -> (f64, f64) {
        Self::half_normal(self.kernel_sd, z)
    }

    pub fn bias_variance(&self, z: f64) -> (f64, f64) {
        Self::half_normal(self.bias_sd, z)
    }

    /// Prior on `z = log(1/sqrt(phi))`.
    pub fn inv_sqrt_phi(&self, z: f64) -> (f64, f64) {
        Self::half_normal(self.inv_sqrt_phi_sd, z)
    }

    /// Normal prior on the zero-inflation logit (identity transform).
    pub fn lambda(&self, lambda: f64) -> (f64, f64) {
        let lp = Normal::new(self.lambda_mean, self.lambda_sd)
            .expect("validated prior")
            .ln_pdf(lambda);
        (lp, -(lambda - self.lambda_mean) / (self.lambda_sd * self.lambda_sd))
    }

    pub fn lengthscale_median(&self) -> f64 {
        InverseGamma::new(self.lengthscale_shape, self.lengthscale_scale)
            .expect("validated prior")
            .inverse_cdf(0.5)
    }

    pub fn kernel_sigma_median(&self) -> f64 {
        self.kernel_sd * HALF_NORMAL_MEDIAN
    }

    pub fn bias_variance_median(&self) -> f64 {
        self.bias_sd * HALF_NORMAL_MEDIAN
    }

    pub fn inv_sqrt_phi_median(&self) -> f64 {
        self.inv_sqrt_phi_sd * HALF_NORMAL_MEDIAN
    }
}
