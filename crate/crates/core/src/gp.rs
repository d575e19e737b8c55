//! Latent Gaussian-process machinery: grid inducing inputs, the
//! Subset-of-Regressors projection with whitened inducing values, exact
//! conditioning, and per-draw latent prediction.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{eval_gram, eval_gram_sym, InputPoint, KernelExpr};
use crate::linalg::{JitteredCholesky, JITTER_START};
use crate::model::FittedModel;

/// Inducing inputs: every location crossed with a strided subset of weeks.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingGrid {
    /// Location-major: all selected weeks of site 0, then site 1, ...
    pub points: Vec<InputPoint>,
    pub weeks: Vec<i64>,
    pub stride_weeks: usize,
    pub include_final_week: bool,
}

impl InducingGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Positions `0, stride, 2 stride, ...` of `n` weeks, plus the last one when
/// `include_final` is set.
pub fn strided_week_positions(n: usize, stride: usize, include_final: bool) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
    if include_final && n > 0 && pos.last() != Some(&(n - 1)) {
        pos.push(n - 1);
    }
    pos
}

/// Builds the inducing grid over `sites` (projected `(x, y)` coordinates) and
/// the training `weeks`.
pub fn select_inducing_grid(
    weeks: &[i64],
    sites: &[(f64, f64)],
    stride: usize,
    include_final: bool,
) -> Result<InducingGrid> {
    if sites.is_empty() {
        return Err(Error::domain("inducing grid needs at least one location"));
    }
    if weeks.is_empty() {
        return Err(Error::domain("inducing grid needs at least one week"));
    }
    if stride == 0 {
        return Err(Error::domain("inducing stride must be at least 1"));
    }
    let selected: Vec<i64> = strided_week_positions(weeks.len(), stride, include_final)
        .into_iter()
        .map(|p| weeks[p])
        .collect();
    let mut points = Vec::with_capacity(sites.len() * selected.len());
    for &(x, y) in sites {
        for &w in &selected {
            points.push(InputPoint::space_time(w as f64, x, y)?);
        }
    }
    Ok(InducingGrid {
        points,
        weeks: selected,
        stride_weeks: stride,
        include_final_week: include_final,
    })
}

/// The linear map `v -> f = K_nm L⁻ᵀ v` for fixed kernel and inputs.
#[derive(Clone, Debug)]
pub struct SorProjector {
    pub chol: JitteredCholesky,
    pub k_nm: DMatrix<f64>,
}

impl SorProjector {
    pub fn new(expr: &KernelExpr, inducing: &[InputPoint], xs: &[InputPoint]) -> Result<Self> {
        Self::with_jitter(expr, inducing, xs, JITTER_START)
    }

    /// [`new`](Self::new) with an explicit starting relative jitter.
    pub fn with_jitter(expr: &KernelExpr, inducing: &[InputPoint], xs: &[InputPoint], rel_jitter: f64) -> Result<Self> {
        let k_mm = eval_gram_sym(expr, inducing)?;
        let chol =
            JitteredCholesky::with_start(&k_mm, rel_jitter).map_err(|e| with_context(e, "inducing covariance"))?;
        let k_nm = eval_gram(expr, xs, inducing)?;
        Ok(SorProjector { chol, k_nm })
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.chol.dim() {
            return Err(Error::domain(format!(
                "whitened vector has {} entries, grid has {}",
                v.len(),
                self.chol.dim()
            )));
        }
        let w = self.chol.solve_lt_vec(&DVector::from_column_slice(v));
        Ok((&self.k_nm * w).iter().copied().collect())
    }

    /// Prior covariance of the projected field, `K_nm K_mm⁻¹ K_mn`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = self.chol.solve_l(&self.k_nm.transpose());
        a.transpose() * a
    }

    /// Inducing values `u = L v`.
    pub fn inducing_values(&self, v: &[f64]) -> Vec<f64> {
        (&self.chol.l * DVector::from_column_slice(v)).iter().copied().collect()
    }
}

fn with_context(e: Error, what: &str) -> Error {
    match e {
        Error::Cholesky { jitter, context } => Error::Cholesky {
            jitter,
            context: format!("{what}: {context}"),
        },
        other => other,
    }
}

/// Latent field at `xs` implied by whitened inducing values `v`.
pub fn sor_project(v: &[f64], grid: &InducingGrid, xs: &[InputPoint], expr: &KernelExpr) -> Result<Vec<f64>> {
    SorProjector::new(expr, &grid.points, xs)?.project(v)
}

/// Gaussian predictive moments.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Conditions a GP with constant mean `mean_const` on noise-free values `f` at
/// `xs` and returns the moments at `x_star`.
pub fn exact_condition(
    expr: &KernelExpr,
    xs: &[InputPoint],
    f: &[f64],
    x_star: &[InputPoint],
    mean_const: f64,
) -> Result<PredictiveMoments> {
    exact_condition_with_jitter(expr, xs, f, x_star, mean_const, JITTER_START)
}

/// [`exact_condition`] with an explicit starting relative jitter.
pub fn exact_condition_with_jitter(
    expr: &KernelExpr,
    xs: &[InputPoint],
    f: &[f64],
    x_star: &[InputPoint],
    mean_const: f64,
    rel_jitter: f64,
) -> Result<PredictiveMoments> {
    if f.len() != xs.len() {
        return Err(Error::domain(format!(
            "{} latent values for {} inputs",
            f.len(),
            xs.len()
        )));
    }
    let k_ss = eval_gram_sym(expr, x_star)?;
    let prior_mean = DVector::from_element(x_star.len(), mean_const);
    if xs.is_empty() {
        return Ok(PredictiveMoments {
            mean: prior_mean,
            cov: k_ss,
        });
    }
    let k = eval_gram_sym(expr, xs)?;
    let chol = JitteredCholesky::with_start(&k, rel_jitter).map_err(|e| with_context(e, "training covariance"))?;
    let k_xs = eval_gram(expr, xs, x_star)?;
    let resid = DVector::from_iterator(f.len(), f.iter().map(|v| v - mean_const));
    let alpha = chol.solve_lt_vec(&chol.solve_l_vec(&resid));
    let a = chol.solve_l(&k_xs);
    let mean = prior_mean + k_xs.transpose() * alpha;
    let mut cov = k_ss - a.transpose() * &a;
    symmetrize(&mut cov);
    Ok(PredictiveMoments { mean, cov })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// How much of the conditional covariance of `f*` given the inducing values
/// is added to predictive latent draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    /// Mean map only.
    None,
    /// Independent noise with the conditional marginal variances.
    #[default]
    Diagonal,
    /// Correlated noise with the full conditional covariance.
    Full,
}

impl std::str::FromStr for Perturbation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Perturbation::None),
            "diagonal" | "diag" => Ok(Perturbation::Diagonal),
            "full" => Ok(Perturbation::Full),
            other => Err(Error::domain(format!("unknown perturbation `{other}`"))),
        }
    }
}

/// SoR prediction at `x_star` for one draw of kernel and whitened values.
#[derive(Clone, Debug)]
pub struct SorPrediction {
    pub mean: Vec<f64>,
    /// `diag(K** - Q**)`, clamped at zero.
    pub cond_var: Vec<f64>,
    /// Diagonal of `Q** = K*m K_mm⁻¹ Km*`.
    pub q_diag: Vec<f64>,
    /// Full conditional covariance, when requested.
    pub cond_cov: Option<DMatrix<f64>>,
}

pub fn sor_predict(
    expr: &KernelExpr,
    inducing: &[InputPoint],
    v: &[f64],
    x_star: &[InputPoint],
    full: bool,
) -> Result<SorPrediction> {
    let k_mm = eval_gram_sym(expr, inducing)?;
    let chol = JitteredCholesky::new(&k_mm).map_err(|e| with_context(e, "inducing covariance"))?;
    if v.len() != chol.dim() {
        return Err(Error::domain("whitened vector does not match the inducing grid"));
    }
    let k_ms = eval_gram(expr, inducing, x_star)?;
    let a = chol.solve_l(&k_ms);
    let mean: Vec<f64> = (a.transpose() * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect();
    let q_diag: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let k_diag: Vec<f64> = x_star.iter().map(|x| expr.eval(x, x)).collect::<Result<_>>()?;
    let cond_var = k_diag.iter().zip(&q_diag).map(|(k, q)| (k - q).max(0.0)).collect();
    let cond_cov = if full {
        let mut c = eval_gram_sym(expr, x_star)? - a.transpose() * &a;
        symmetrize(&mut c);
        Some(c)
    } else {
        None
    };
    Ok(SorPrediction {
        mean,
        cond_var,
        q_diag,
        cond_cov,
    })
}

/// One latent draw at `x_star` from a prediction, perturbed as requested.
pub fn draw_latent(pred: &SorPrediction, perturbation: Perturbation, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut out = pred.mean.clone();
    match perturbation {
        Perturbation::None => {}
        Perturbation::Diagonal => {
            for (o, var) in out.iter_mut().zip(&pred.cond_var) {
                let z: f64 = StandardNormal.sample(rng);
                *o += var.sqrt() * z;
            }
        }
        Perturbation::Full => {
            let cov = pred
                .cond_cov
                .as_ref()
                .ok_or_else(|| Error::domain("full perturbation needs the full conditional covariance"))?;
            if cov.nrows() > 0 && cov.diagonal().max() > 0.0 {
                let chol = JitteredCholesky::new(cov).map_err(|e| with_context(e, "predictive covariance"))?;
                let z = DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|_| StandardNormal.sample(rng)));
                for (o, d) in out.iter_mut().zip((&chol.l * z).iter()) {
                    *o += d;
                }
            }
        }
    }
    Ok(out)
}

/// Latent draws at `x_star` for the posterior draws `draws` (pairs of chain
/// and iteration), one row per draw.
///
/// Draw `k` uses an RNG stream derived from `(seed, k)`, so the result does
/// not depend on the thread count.
pub fn predict_latent_samples(
    fitted: &FittedModel,
    x_star: &[InputPoint],
    draws: &[(usize, usize)],
    perturbation: Perturbation,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = draws
        .par_iter()
        .enumerate()
        .map(|(k, &(chain, iter))| {
            let kernel = fitted.kernel_at(chain, iter)?;
            let v = fitted.samples.latent(chain, iter);
            let pred = sor_predict(
                &kernel,
                &fitted.grid.points,
                v,
                x_star,
                perturbation == Perturbation::Full,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            draw_latent(&pred, perturbation, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(draws.len(), x_star.len());
    for (s, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(s, j)] = *v;
        }
    }
    Ok(out)
}
