//! Joint log posterior of kernel hyperparameters, observation parameters and
//! whitened inducing values.
//!
//! Unconstrained layout: log kernel parameters (unless the kernel is fixed),
//! then `log(1/sqrt(phi))` for negative-binomial families, then the
//! zero-inflation logit for ZINB, then `v_1..v_M`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hmc::{HmcRun, LogDensity, SamplerConfig};
use super::priors::PriorConfig;
use super::samples::{sample_names, ChainStats, PosteriorSamples};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::InducingGrid;
use crate::kernel::{eval_gram, eval_gram_sym, InputPoint, KernelExpr, ParamLayout, ParamSlot};
use crate::linalg::JitteredCholesky;
use crate::model::ModelSpec;
use crate::obs::{cell_loglik_grad, FamilyKind, ObsFamily, OffsetTable};

pub struct GpPosterior {
    kernel: KernelExpr,
    layout: Option<ParamLayout>,
    slots: Vec<ParamSlot>,
    family: FamilyKind,
    priors: PriorConfig,
    names: Vec<String>,
    inducing: Vec<InputPoint>,
    xs: Vec<InputPoint>,
    ys: Vec<u64>,
    es: Vec<f64>,
    n_kernel: usize,
    n_hyper: usize,
}

impl GpPosterior {
    /// Target over the observed cells of `data`.
    pub fn new(spec: &ModelSpec, data: &Dataset, offsets: &OffsetTable, grid: &InducingGrid) -> Result<Self> {
        if offsets.expected.len() != data.n_cells() {
            return Err(Error::domain("offsets do not match the dataset"));
        }
        let cells = data.observed_cells();
        let layout = if spec.fix_kernel {
            None
        } else {
            Some(spec.kernel_layout())
        };
        let slots = layout.as_ref().map(|l| l.slots()).unwrap_or_default();
        let n_kernel = slots.len();
        let names = spec.hyper_names();
        Ok(GpPosterior {
            kernel: spec.kernel.clone(),
            layout,
            slots,
            family: spec.family,
            priors: spec.priors,
            n_hyper: names.len(),
            names,
            inducing: grid.points.clone(),
            xs: data.inputs(&cells, spec.projection),
            ys: cells.iter().map(|&c| data.count(c).expect("observed")).collect(),
            es: cells.iter().map(|&c| offsets.expected[c]).collect(),
            n_kernel,
        })
    }

    pub fn n_hyper(&self) -> usize {
        self.n_hyper
    }

    pub fn n_latent(&self) -> usize {
        self.inducing.len()
    }

    /// Parameter names of [`to_samples`](Self::to_samples) output.
    pub fn sample_names(&self) -> Vec<String> {
        sample_names(&self.names, self.n_latent())
    }

    fn family_at(&self, z: &[f64]) -> ObsFamily {
        let k = self.n_kernel;
        match self.family {
            FamilyKind::NegBinomial => ObsFamily::NegBinomial {
                phi: (-2.0 * z[k]).exp(),
            },
            FamilyKind::Zinb => ObsFamily::Zinb {
                phi: (-2.0 * z[k]).exp(),
                lambda: z[k + 1],
            },
            FamilyKind::Poisson => ObsFamily::Poisson,
        }
    }

    /// Maps an unconstrained point to natural-scale values.
    pub fn constrain(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        for v in &mut out[..self.n_kernel] {
            *v = v.exp();
        }
        if matches!(self.family, FamilyKind::NegBinomial | FamilyKind::Zinb) {
            let k = self.n_kernel;
            out[k] = (-2.0 * z[k]).exp();
        }
        out
    }

    /// Prior medians for the hyperparameters and zero for `v`, jittered
    /// uniformly on the unconstrained scale; one point per chain.
    pub fn initial_points(&self, cfg: &SamplerConfig) -> Vec<Vec<f64>> {
        let mut base = Vec::with_capacity(self.dim());
        let p = &self.priors;
        for slot in &self.slots {
            base.push(match slot {
                ParamSlot::Lengthscale => p.lengthscale_median().ln(),
                ParamSlot::Sigma => p.kernel_sigma_median().ln(),
                ParamSlot::BiasVariance => p.bias_variance_median().ln(),
            });
        }
        match self.family {
            FamilyKind::NegBinomial => base.push(p.inv_sqrt_phi_median().ln()),
            FamilyKind::Zinb => base.extend([p.inv_sqrt_phi_median().ln(), p.lambda_mean]),
            FamilyKind::Poisson => {}
        }
        base.resize(self.dim(), 0.0);
        (0..cfg.n_chains)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1417);
                rng.set_stream(c as u64);
                base.iter()
                    .map(|b| {
                        if cfg.init_jitter > 0.0 {
                            b + rng.random_range(-cfg.init_jitter..cfg.init_jitter)
                        } else {
                            *b
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Converts sampler output to natural-scale draws.
    pub fn to_samples(&self, run: &HmcRun) -> Result<PosteriorSamples> {
        let draws: Vec<Vec<Vec<f64>>> = run
            .chains
            .iter()
            .map(|c| c.draws.iter().map(|z| self.constrain(z)).collect())
            .collect();
        let stats = run
            .chains
            .iter()
            .map(|c| ChainStats {
                accept_rate: c.mean_accept(),
                step_size: c.step_size,
                divergences: c.divergences,
            })
            .collect();
        Ok(PosteriorSamples {
            names: self.sample_names(),
            n_hyper: self.n_hyper,
            draws,
            stats,
        })
    }

    /// Log-likelihood of the data at `z`, without priors.
    pub fn log_likelihood(&self, z: &[f64]) -> Result<f64> {
        let kernel = self.kernel_at(z)?;
        let k_mm = eval_gram_sym(&kernel, &self.inducing)?;
        let chol = JitteredCholesky::new(&k_mm)?;
        let v = DVector::from_column_slice(&z[self.n_hyper..]);
        let f = eval_gram(&kernel, &self.xs, &self.inducing)? * chol.solve_lt_vec(&v);
        let family = self.family_at(z);
        Ok((0..self.ys.len())
            .map(|i| cell_loglik_grad(self.ys[i], self.es[i], f[i], &family).ll)
            .sum())
    }

    fn kernel_at(&self, z: &[f64]) -> Result<KernelExpr> {
        match &self.layout {
            Some(l) => l.unvector(&self.kernel, &z[..self.n_kernel]),
            None => Ok(self.kernel.clone()),
        }
    }
}

/// `Φ(A)`: strict lower triangle of `A` plus half its diagonal.
fn phi_lower(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => a[(i, j)],
        std::cmp::Ordering::Equal => 0.5 * a[(i, i)],
        std::cmp::Ordering::Less => 0.0,
    })
}

impl LogDensity for GpPosterior {
    fn dim(&self) -> usize {
        self.n_hyper + self.inducing.len()
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        if z.len() != self.dim() || grad.len() != self.dim() {
            return Err(Error::domain("point has the wrong dimension"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite point"));
        }
        let kernel = self.kernel_at(z)?;
        let (k_mm, dk_mm, k_nm, dk_nm) = match &self.layout {
            Some(l) => {
                let (k_mm, dk_mm) = l.gram_with_grad(&kernel, &self.inducing, &self.inducing);
                let (k_nm, dk_nm) = l.gram_with_grad(&kernel, &self.xs, &self.inducing);
                (k_mm, dk_mm, k_nm, dk_nm)
            }
            None => (
                eval_gram_sym(&kernel, &self.inducing)?,
                Vec::new(),
                eval_gram(&kernel, &self.xs, &self.inducing)?,
                Vec::new(),
            ),
        };
        let chol = JitteredCholesky::new(&k_mm)?;
        let v = DVector::from_column_slice(&z[self.n_hyper..]);
        let w = chol.solve_lt_vec(&v);
        let f = &k_nm * &w;

        let family = self.family_at(z);
        let mut ll = 0.0;
        let mut g = DVector::zeros(self.ys.len());
        let (mut d_r, mut d_lambda) = (0.0, 0.0);
        for i in 0..self.ys.len() {
            let c = cell_loglik_grad(self.ys[i], self.es[i], f[i], &family);
            ll += c.ll;
            g[i] = c.d_latent;
            d_r += c.d_r;
            d_lambda += c.d_lambda;
        }
        if !ll.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }

        grad.fill(0.0);
        let a = chol.solve_l_vec(&(k_nm.transpose() * &g));
        let mut lp = ll - 0.5 * v.norm_squared();
        for (k, gv) in grad[self.n_hyper..].iter_mut().enumerate() {
            *gv = a[k] - v[k];
        }

        if !self.slots.is_empty() {
            // d ll / d K_mm through the Cholesky factor of the jittered matrix
            let c = phi_lower(&(&v * a.transpose()));
            let gm = chol.solve_lt(&chol.solve_lt(&c).transpose()).transpose();
            let tr_g = gm.trace();
            let m = self.inducing.len() as f64;
            for (p, slot) in self.slots.iter().enumerate() {
                let direct = g.dot(&(&dk_nm[p] * &w));
                let through_chol = dk_mm[p].dot(&gm) + chol.rel_jitter * dk_mm[p].trace() / m * tr_g;
                let (prior, dprior) = match slot {
                    ParamSlot::Lengthscale => self.priors.lengthscale(z[p]),
                    ParamSlot::Sigma => self.priors.kernel_sigma(z[p]),
                    ParamSlot::BiasVariance => self.priors.bias_variance(z[p]),
                };
                lp += prior;
                grad[p] = direct - through_chol + dprior;
            }
        }
        let k = self.n_kernel;
        if matches!(self.family, FamilyKind::NegBinomial | FamilyKind::Zinb) {
            // z = log psi, r = 1/phi = psi²
            let r = (2.0 * z[k]).exp();
            let (prior, dprior) = self.priors.inv_sqrt_phi(z[k]);
            lp += prior;
            grad[k] = d_r * 2.0 * r + dprior;
        }
        if self.family == FamilyKind::Zinb {
            let (prior, dprior) = self.priors.lambda(z[k + 1]);
            lp += prior;
            grad[k + 1] = d_lambda + dprior;
        }
        Ok(lp)
    }
}
