//! Covariance kernels over space-time inputs and their closure under sum and
//! product.
//!
//! Inputs are [`InputPoint`]s whose dimension 0 is the (unscaled) week index
//! and dimensions 1-2 are longitude and latitude in degrees. Every base kernel
//! is stationary: it sees the two points only through the Euclidean distance
//! over its active dimensions.

mod params;
mod parse;

pub use params::{param_unvector, param_vector, ParamLayout, ParamSlot};
pub use parse::parse_kernel;

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventional input dimensions.
pub const TIME_DIM: usize = 0;
pub const LON_DIM: usize = 1;
pub const LAT_DIM: usize = 2;

/// Default seasonal period, in weeks.
pub const DEFAULT_PERIOD: f64 = 52.0;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// A point in input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::domain("input point must have at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(format!("non-finite input coordinate in {coords:?}")));
        }
        Ok(InputPoint(coords))
    }

    /// `(week, lon, lat)`.
    pub fn space_time(week: f64, lon: f64, lat: f64) -> Result<Self> {
        Self::new(vec![week, lon, lat])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Returns a copy with `offset` added to every coordinate.
    pub fn shifted(&self, offset: &[f64]) -> Self {
        InputPoint(self.0.iter().zip(offset).map(|(a, b)| a + b).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Exponential,
    Matern32,
    Rbf,
    Periodic,
    /// Constant kernel; carries the constant mean level of the field.
    Bias,
}

impl KernelKind {
    pub fn label(self) -> &'static str {
        match self {
            KernelKind::Exponential => "exponential",
            KernelKind::Matern32 => "matern32",
            KernelKind::Rbf => "rbf",
            KernelKind::Periodic => "periodic",
            KernelKind::Bias => "bias",
        }
    }

    /// Kernel value as a function of the distance `d` between two inputs
    /// (for the periodic kernel, a one-dimensional distance).
    ///
    /// The exponential kernel uses `exp(-d / (2 l))`, the form used by the
    /// original modelling software, rather than the textbook `exp(-d / l)`.
    #[inline]
    pub fn profile(self, p: &KernelParams, d: f64) -> f64 {
        let var = p.variance;
        let l = p.lengthscale;
        match self {
            KernelKind::Exponential => var * (-d / (2.0 * l)).exp(),
            KernelKind::Matern32 => {
                let r = SQRT3 * d / l;
                var * (1.0 + r) * (-r).exp()
            }
            KernelKind::Rbf => var * (-(d * d) / (2.0 * l * l)).exp(),
            KernelKind::Periodic => {
                let s = (PI * d / p.period).sin();
                var * (-(s * s) / (2.0 * l * l)).exp()
            }
            KernelKind::Bias => var,
        }
    }

    /// Value and derivative with respect to `log(lengthscale)`.
    #[inline]
    pub(crate) fn profile_dlog_len(self, p: &KernelParams, d: f64) -> (f64, f64) {
        let var = p.variance;
        let l = p.lengthscale;
        match self {
            KernelKind::Exponential => {
                let k = var * (-d / (2.0 * l)).exp();
                (k, k * d / (2.0 * l))
            }
            KernelKind::Matern32 => {
                let r = SQRT3 * d / l;
                let e = (-r).exp();
                (var * (1.0 + r) * e, var * r * r * e)
            }
            KernelKind::Rbf => {
                let q = d * d / (l * l);
                let k = var * (-0.5 * q).exp();
                (k, k * q)
            }
            KernelKind::Periodic => {
                let s = (PI * d / p.period).sin();
                let q = s * s / (l * l);
                let k = var * (-0.5 * q).exp();
                (k, k * q)
            }
            KernelKind::Bias => (var, 0.0),
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(KernelKind::Exponential),
            "matern32" | "mat32" => Ok(KernelKind::Matern32),
            "rbf" | "se" => Ok(KernelKind::Rbf),
            "periodic" | "per" => Ok(KernelKind::Periodic),
            "bias" | "constant" => Ok(KernelKind::Bias),
            other => Err(Error::domain(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscale: f64,
    /// Period in weeks; only read by the periodic kernel.
    pub period: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            variance: 1.0,
            lengthscale: 1.0,
            period: DEFAULT_PERIOD,
        }
    }
}

impl KernelParams {
    pub fn new(variance: f64, lengthscale: f64, period: f64) -> Result<Self> {
        let p = KernelParams {
            variance,
            lengthscale,
            period,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("variance", self.variance),
            ("lengthscale", self.lengthscale),
            ("period", self.period),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("kernel {name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A base kernel leaf. Leaves that share a `name` share their
/// hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    pub kind: KernelKind,
    pub params: KernelParams,
    pub active_dims: Vec<usize>,
    pub name: String,
}

impl BaseKernel {
    pub fn new(
        kind: KernelKind,
        params: KernelParams,
        active_dims: Vec<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        params.validate()?;
        if kind != KernelKind::Bias && active_dims.is_empty() {
            return Err(Error::domain(format!(
                "{} kernel needs at least one active dimension",
                kind.label()
            )));
        }
        Ok(BaseKernel {
            kind,
            params,
            active_dims,
            name: name.into(),
        })
    }

    #[inline]
    fn distance(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.active_dims.as_slice() {
            [d] => (x[*d] - x2[*d]).abs(),
            dims => dims
                .iter()
                .map(|&d| {
                    let t = x[d] - x2[d];
                    t * t
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Kernel value between raw coordinates. Over several active dimensions
    /// the periodic kernel sums `sin²(π d_i / p)` per dimension, which keeps
    /// it positive semi-definite; over one dimension both forms agree.
    #[inline]
    fn value(&self, x: &[f64], x2: &[f64]) -> f64 {
        if self.kind == KernelKind::Periodic && self.active_dims.len() > 1 {
            self.periodic_multi(x, x2).0
        } else {
            self.kind.profile(&self.params, self.distance(x, x2))
        }
    }

    /// [`value`](Self::value) and its derivative with respect to
    /// `log(lengthscale)`.
    #[inline]
    fn value_dlog_len(&self, x: &[f64], x2: &[f64]) -> (f64, f64) {
        if self.kind == KernelKind::Periodic && self.active_dims.len() > 1 {
            self.periodic_multi(x, x2)
        } else {
            self.kind.profile_dlog_len(&self.params, self.distance(x, x2))
        }
    }

    fn periodic_multi(&self, x: &[f64], x2: &[f64]) -> (f64, f64) {
        let p = &self.params;
        let s2: f64 = self
            .active_dims
            .iter()
            .map(|&d| (PI * (x[d] - x2[d]) / p.period).sin().powi(2))
            .sum();
        let q = s2 / (p.lengthscale * p.lengthscale);
        let k = p.variance * (-0.5 * q).exp();
        (k, k * q)
    }

    /// Evaluates the kernel between two points.
    pub fn eval(&self, x: &InputPoint, x2: &InputPoint) -> Result<f64> {
        self.check_dims(x.dim())?;
        if x2.dim() != x.dim() {
            return Err(Error::domain("input points have different dimensions"));
        }
        Ok(self.value(x.coords(), x2.coords()))
    }

    fn check_dims(&self, dim: usize) -> Result<()> {
        if self.kind == KernelKind::Bias {
            return Ok(());
        }
        match self.active_dims.iter().find(|&&d| d >= dim) {
            Some(d) => Err(Error::domain(format!(
                "kernel `{}` uses dimension {d} but inputs have dimension {dim}",
                self.name
            ))),
            None => Ok(()),
        }
    }
}

/// Evaluates a base kernel of the given kind at two points, with the distance
/// taken over `active_dims`.
pub fn eval_base(
    kind: KernelKind,
    params: &KernelParams,
    active_dims: &[usize],
    x: &InputPoint,
    x2: &InputPoint,
) -> Result<f64> {
    BaseKernel::new(kind, *params, active_dims.to_vec(), "k")?.eval(x, x2)
}

/// A kernel expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelExpr {
    Base(BaseKernel),
    Sum(Box<KernelExpr>, Box<KernelExpr>),
    Product(Box<KernelExpr>, Box<KernelExpr>),
}

impl KernelExpr {
    pub fn base(kind: KernelKind, params: KernelParams, active_dims: Vec<usize>, name: &str) -> Result<Self> {
        Ok(KernelExpr::Base(BaseKernel::new(kind, params, active_dims, name)?))
    }

    pub fn bias(variance: f64, name: &str) -> Result<Self> {
        Self::base(
            KernelKind::Bias,
            KernelParams {
                variance,
                ..KernelParams::default()
            },
            Vec::new(),
            name,
        )
    }

    pub fn sum(self, other: KernelExpr) -> Self {
        KernelExpr::Sum(Box::new(self), Box::new(other))
    }

    pub fn product(self, other: KernelExpr) -> Self {
        KernelExpr::Product(Box::new(self), Box::new(other))
    }

    /// Leaves in depth-first, left-to-right order.
    pub fn leaves(&self) -> Vec<&BaseKernel> {
        let mut out = Vec::new();
        self.visit(&mut |b| out.push(b));
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a BaseKernel)) {
        match self {
            KernelExpr::Base(b) => f(b),
            KernelExpr::Sum(l, r) | KernelExpr::Product(l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut impl FnMut(&mut BaseKernel)) {
        match self {
            KernelExpr::Base(b) => f(b),
            KernelExpr::Sum(l, r) | KernelExpr::Product(l, r) => {
                l.visit_mut(f);
                r.visit_mut(f);
            }
        }
    }

    /// Union of the active dimensions of all non-bias leaves.
    pub fn active_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self
            .leaves()
            .iter()
            .filter(|b| b.kind != KernelKind::Bias)
            .flat_map(|b| b.active_dims.iter().copied())
            .collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    /// Number of additive terms when the tree is expanded at its top-level
    /// sums.
    pub fn additive_terms(&self) -> usize {
        match self {
            KernelExpr::Sum(l, r) => l.additive_terms() + r.additive_terms(),
            _ => 1,
        }
    }

    /// Kernel value between two points.
    pub fn eval(&self, x: &InputPoint, x2: &InputPoint) -> Result<f64> {
        match self {
            KernelExpr::Base(b) => b.eval(x, x2),
            KernelExpr::Sum(l, r) => Ok(l.eval(x, x2)? + r.eval(x, x2)?),
            KernelExpr::Product(l, r) => Ok(l.eval(x, x2)? * r.eval(x, x2)?),
        }
    }

    fn check_inputs(&self, xs: &[InputPoint], x2s: &[InputPoint]) -> Result<()> {
        let dim = xs.first().or(x2s.first()).map(InputPoint::dim);
        if let Some(dim) = dim {
            if xs.iter().chain(x2s).any(|p| p.dim() != dim) {
                return Err(Error::domain("input points have inconsistent dimensions"));
            }
            for leaf in self.leaves() {
                leaf.check_dims(dim)?;
            }
        }
        Ok(())
    }
}

/// Gram matrix `K[a, b] = k(xs[a], x2s[b])`.
pub fn eval_gram(expr: &KernelExpr, xs: &[InputPoint], x2s: &[InputPoint]) -> Result<DMatrix<f64>> {
    expr.check_inputs(xs, x2s)?;
    Ok(gram_unchecked(expr, xs, x2s))
}

/// Symmetric Gram matrix of `xs` with itself; only the lower triangle is
/// evaluated.
pub fn eval_gram_sym(expr: &KernelExpr, xs: &[InputPoint]) -> Result<DMatrix<f64>> {
    expr.check_inputs(xs, &[])?;
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = eval_unchecked(expr, xs[a].coords(), xs[b].coords());
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

fn eval_unchecked(expr: &KernelExpr, x: &[f64], x2: &[f64]) -> f64 {
    match expr {
        KernelExpr::Base(b) => b.value(x, x2),
        KernelExpr::Sum(l, r) => eval_unchecked(l, x, x2) + eval_unchecked(r, x, x2),
        KernelExpr::Product(l, r) => eval_unchecked(l, x, x2) * eval_unchecked(r, x, x2),
    }
}

fn gram_unchecked(expr: &KernelExpr, xs: &[InputPoint], x2s: &[InputPoint]) -> DMatrix<f64> {
    match expr {
        KernelExpr::Base(b) => leaf_gram(b, xs, x2s, false).0,
        KernelExpr::Sum(l, r) => gram_unchecked(l, xs, x2s) + gram_unchecked(r, xs, x2s),
        KernelExpr::Product(l, r) => gram_unchecked(l, xs, x2s).component_mul(&gram_unchecked(r, xs, x2s)),
    }
}

/// Groups points by their coordinates on `dims`: returns, for every point,
/// the index of its group, and one representative point per group.
fn dedup_on_dims<'a>(xs: &'a [InputPoint], dims: &[usize]) -> (Vec<usize>, Vec<&'a [f64]>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let index = xs
        .iter()
        .map(|x| {
            let key: Vec<u64> = dims.iter().map(|&d| x.coords()[d].to_bits()).collect();
            *seen.entry(key).or_insert_with(|| {
                reps.push(x.coords());
                reps.len() - 1
            })
        })
        .collect();
    (index, reps)
}

/// Gram matrix of one leaf, and optionally its derivative with respect to
/// the log lengthscale. Each distinct pair of active coordinates is
/// evaluated once.
pub(crate) fn leaf_gram(
    b: &BaseKernel,
    xs: &[InputPoint],
    x2s: &[InputPoint],
    with_dlen: bool,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let (n, m) = (xs.len(), x2s.len());
    if b.kind == KernelKind::Bias {
        let dlen = with_dlen.then(|| DMatrix::zeros(n, m));
        return (DMatrix::from_element(n, m, b.params.variance), dlen);
    }
    let (ia, ra) = dedup_on_dims(xs, &b.active_dims);
    let (ib, rb) = dedup_on_dims(x2s, &b.active_dims);
    let mut small = DMatrix::zeros(ra.len(), rb.len());
    let mut small_d = DMatrix::zeros(if with_dlen { ra.len() } else { 0 }, rb.len());
    for (j, y) in rb.iter().enumerate() {
        for (i, x) in ra.iter().enumerate() {
            if with_dlen {
                let (v, dl) = b.value_dlog_len(x, y);
                small[(i, j)] = v;
                small_d[(i, j)] = dl;
            } else {
                small[(i, j)] = b.value(x, y);
            }
        }
    }
    let k = DMatrix::from_fn(n, m, |i, j| small[(ia[i], ib[j])]);
    let dlen = with_dlen.then(|| DMatrix::from_fn(n, m, |i, j| small_d[(ia[i], ib[j])]));
    (k, dlen)
}

/// Combines a temporal and a spatial kernel into
/// `k_time + k_space + k_time * k_space`.
///
/// The interaction term reuses the leaves (and therefore the
/// hyperparameters) of the two inputs. Callers append the bias term.
pub fn build_spatiotemporal(k_time: KernelExpr, k_space: KernelExpr) -> Result<KernelExpr> {
    let time_dims = k_time.active_dims();
    let space_dims = k_space.active_dims();
    if let Some(d) = time_dims.iter().find(|d| space_dims.contains(d)) {
        return Err(Error::domain(format!(
            "time and space kernels both act on dimension {d}"
        )));
    }
    let interaction = k_time.clone().product(k_space.clone());
    Ok(k_time.sum(k_space).sum(interaction))
}
