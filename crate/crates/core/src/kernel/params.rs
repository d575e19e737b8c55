//! Flat parameterization of a kernel tree for the sampler.
//!
//! Leaves are visited depth-first, left to right. A leaf contributes
//! `len_<name>` and `sigma_<name>` (bias leaves contribute `<name>_var`);
//! later leaves with an already-seen name reuse those slots. All parameters
//! are positive and are exposed on the log scale.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{leaf_gram, BaseKernel, InputPoint, KernelExpr, KernelKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSlot {
    Lengthscale,
    /// Standard deviation; the kernel variance is its square.
    Sigma,
    /// Bias kernels are parameterized by their variance directly.
    BiasVariance,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    leaf: String,
    slot: ParamSlot,
}

#[derive(Clone, Debug)]
pub struct ParamLayout {
    entries: Vec<Entry>,
    first_slot: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn of(expr: &KernelExpr) -> Result<Self> {
        let mut entries = Vec::new();
        let mut first_slot = HashMap::new();
        let mut seen: HashMap<String, BaseKernel> = HashMap::new();
        for leaf in expr.leaves() {
            if let Some(prev) = seen.get(&leaf.name) {
                if prev != leaf {
                    return Err(Error::domain(format!(
                        "kernel leaves named `{}` share parameters but differ",
                        leaf.name
                    )));
                }
                continue;
            }
            seen.insert(leaf.name.clone(), leaf.clone());
            first_slot.insert(leaf.name.clone(), entries.len());
            let push = |entries: &mut Vec<Entry>, name: String, slot| {
                entries.push(Entry {
                    name,
                    leaf: leaf.name.clone(),
                    slot,
                })
            };
            if leaf.kind == KernelKind::Bias {
                push(&mut entries, format!("{}_var", leaf.name), ParamSlot::BiasVariance);
            } else {
                push(&mut entries, format!("len_{}", leaf.name), ParamSlot::Lengthscale);
                push(&mut entries, format!("sigma_{}", leaf.name), ParamSlot::Sigma);
            }
        }
        Ok(ParamLayout { entries, first_slot })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn slots(&self) -> Vec<ParamSlot> {
        self.entries.iter().map(|e| e.slot).collect()
    }

    /// Parameter values on their natural (positive) scale.
    pub fn constrained(&self, expr: &KernelExpr) -> Vec<f64> {
        let leaves: HashMap<&str, &BaseKernel> = expr.leaves().into_iter().map(|b| (b.name.as_str(), b)).collect();
        self.entries
            .iter()
            .map(|e| {
                let p = &leaves[e.leaf.as_str()].params;
                match e.slot {
                    ParamSlot::Lengthscale => p.lengthscale,
                    ParamSlot::Sigma => p.variance.sqrt(),
                    ParamSlot::BiasVariance => p.variance,
                }
            })
            .collect()
    }

    /// Log of [`constrained`](Self::constrained).
    pub fn vector(&self, expr: &KernelExpr) -> Vec<f64> {
        self.constrained(expr).into_iter().map(f64::ln).collect()
    }

    /// Returns `expr` with its parameters replaced by `values` (natural scale).
    pub fn with_constrained(&self, expr: &KernelExpr, values: &[f64]) -> Result<KernelExpr> {
        if values.len() != self.len() {
            return Err(Error::domain(format!(
                "expected {} kernel parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut out = expr.clone();
        let mut err = None;
        out.visit_mut(&mut |b| {
            let Some(&first) = self.first_slot.get(&b.name) else {
                err = Some(Error::domain(format!("kernel leaf `{}` not in layout", b.name)));
                return;
            };
            match b.kind {
                KernelKind::Bias => b.params.variance = values[first],
                _ => {
                    b.params.lengthscale = values[first];
                    b.params.variance = values[first + 1] * values[first + 1];
                }
            }
            if let Err(e) = b.params.validate() {
                err = Some(e);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Inverse of [`vector`](Self::vector).
    pub fn unvector(&self, expr: &KernelExpr, z: &[f64]) -> Result<KernelExpr> {
        let values: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        self.with_constrained(expr, &values)
    }

    /// Gram matrix together with its derivatives with respect to each
    /// log-parameter, in layout order.
    pub fn gram_with_grad(
        &self,
        expr: &KernelExpr,
        xs: &[InputPoint],
        x2s: &[InputPoint],
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (k, parts) = self.grad_rec(expr, xs, x2s);
        let mut grads = vec![DMatrix::zeros(xs.len(), x2s.len()); self.len()];
        for (idx, m) in parts {
            grads[idx] += m;
        }
        (k, grads)
    }

    fn grad_rec(
        &self,
        expr: &KernelExpr,
        xs: &[InputPoint],
        x2s: &[InputPoint],
    ) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
        match expr {
            KernelExpr::Base(b) => {
                let first = self.first_slot[&b.name];
                let (k, dlen) = leaf_gram(b, xs, x2s, true);
                if b.kind == KernelKind::Bias {
                    // d k / d log(var) = k
                    return (k.clone(), vec![(first, k)]);
                }
                // k ∝ sigma², so d k / d log(sigma) = 2k
                let dsigma = &k * 2.0;
                (k, vec![(first, dlen.expect("requested")), (first + 1, dsigma)])
            }
            KernelExpr::Sum(l, r) => {
                let (kl, mut gl) = self.grad_rec(l, xs, x2s);
                let (kr, gr) = self.grad_rec(r, xs, x2s);
                gl.extend(gr);
                (kl + kr, gl)
            }
            KernelExpr::Product(l, r) => {
                let (kl, gl) = self.grad_rec(l, xs, x2s);
                let (kr, gr) = self.grad_rec(r, xs, x2s);
                let mut g: Vec<_> = gl.into_iter().map(|(i, d)| (i, d.component_mul(&kr))).collect();
                g.extend(gr.into_iter().map(|(i, d)| (i, kl.component_mul(&d))));
                (kl.component_mul(&kr), g)
            }
        }
    }
}

/// Unconstrained (log-scale) parameter vector of `expr`.
pub fn param_vector(expr: &KernelExpr) -> Result<Vec<f64>> {
    Ok(ParamLayout::of(expr)?.vector(expr))
}

/// Rebuilds `expr` with parameters taken from an unconstrained vector.
pub fn param_unvector(expr: &KernelExpr, z: &[f64]) -> Result<KernelExpr> {
    ParamLayout::of(expr)?.unvector(expr, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_spatiotemporal, eval_gram, KernelParams};
    use proptest::prelude::*;

    fn model2() -> KernelExpr {
        let t = KernelExpr::base(
            KernelKind::Matern32,
            KernelParams::new(0.3, 1.1, 52.0).unwrap(),
            vec![0],
            "time",
        )
        .unwrap();
        let s = KernelExpr::base(
            KernelKind::Matern32,
            KernelParams::new(1.2, 0.3, 52.0).unwrap(),
            vec![1, 2],
            "space",
        )
        .unwrap();
        build_spatiotemporal(t, s)
            .unwrap()
            .sum(KernelExpr::bias(0.8, "bias").unwrap())
    }

    #[test]
    fn model2_has_five_shared_parameters() {
        let layout = ParamLayout::of(&model2()).unwrap();
        assert_eq!(
            layout.names(),
            ["len_time", "sigma_time", "len_space", "sigma_space", "bias_var"]
        );
    }

    #[test]
    fn log_transform_of_unit_sigma_is_zero() {
        let k = KernelExpr::base(
            KernelKind::Rbf,
            KernelParams::new(1.0, 2.0, 52.0).unwrap(),
            vec![0],
            "t",
        )
        .unwrap();
        let z = param_vector(&k).unwrap();
        assert_eq!(z[1], 0.0);
        assert_eq!(z[0], 2f64.ln());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(param_unvector(&model2(), &[0.0; 4]).is_err());
    }

    #[test]
    fn inconsistent_sharing_is_rejected() {
        let a = KernelExpr::base(KernelKind::Rbf, KernelParams::default(), vec![0], "t").unwrap();
        let b = KernelExpr::base(KernelKind::Matern32, KernelParams::default(), vec![0], "t").unwrap();
        assert!(ParamLayout::of(&a.sum(b)).is_err());
    }

    #[test]
    fn gram_gradient_matches_finite_differences() {
        let expr = model2();
        let layout = ParamLayout::of(&expr).unwrap();
        let xs: Vec<InputPoint> = (0..4)
            .map(|i| InputPoint::space_time(i as f64 * 1.5, -1.0 + 0.2 * i as f64, 52.5 - 0.1 * i as f64).unwrap())
            .collect();
        let z = layout.vector(&expr);
        let (_, grads) = layout.gram_with_grad(&expr, &xs, &xs);
        let h = 1e-6;
        for p in 0..z.len() {
            let mut zp = z.clone();
            zp[p] += h;
            let mut zm = z.clone();
            zm[p] -= h;
            let kp = eval_gram(&layout.unvector(&expr, &zp).unwrap(), &xs, &xs).unwrap();
            let km = eval_gram(&layout.unvector(&expr, &zm).unwrap(), &xs, &xs).unwrap();
            let fd = (kp - km) / (2.0 * h);
            assert!((&fd - &grads[p]).abs().max() < 1e-7, "param {p}");
        }
    }

    proptest! {
        #[test]
        fn vector_round_trip(ls in prop::collection::vec(-3.0f64..3.0, 5)) {
            let expr = model2();
            let back = param_unvector(&expr, &ls).unwrap();
            let z = param_vector(&back).unwrap();
            for (a, b) in z.iter().zip(&ls) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
