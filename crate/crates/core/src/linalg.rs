//! Cholesky factorization with diagonal jitter escalation, and the triangular
//! solves built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// First relative jitter tried, as a multiple of the mean diagonal.
pub const JITTER_START: f64 = 1e-6;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Lower Cholesky factor of `K + jitter * I`.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub l: DMatrix<f64>,
    /// Jitter relative to the mean of the diagonal of `K`.
    pub rel_jitter: f64,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
}

impl JitteredCholesky {
    /// Factorizes `k`, starting at [`JITTER_START`] and escalating by 10x up to
    /// [`JITTER_MAX`].
    pub fn new(k: &DMatrix<f64>) -> Result<Self> {
        Self::with_start(k, JITTER_START)
    }

    pub fn with_start(k: &DMatrix<f64>, start: f64) -> Result<Self> {
        let n = k.nrows();
        if n != k.ncols() {
            return Err(Error::domain("cholesky of a non-square matrix"));
        }
        if n == 0 {
            return Ok(JitteredCholesky {
                l: DMatrix::zeros(0, 0),
                rel_jitter: start,
                jitter: 0.0,
            });
        }
        let scale = k.diagonal().mean().abs().max(f64::MIN_POSITIVE);
        let mut rel = start;
        loop {
            let jitter = rel * scale;
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(ch) = kj.cholesky() {
                return Ok(JitteredCholesky {
                    l: ch.unpack(),
                    rel_jitter: rel,
                    jitter,
                });
            }
            if rel >= JITTER_MAX * (1.0 - 1e-9) {
                return Err(Error::Cholesky {
                    jitter,
                    context: format!("{n}x{n} covariance not positive definite"),
                });
            }
            rel = (rel * 10.0).min(JITTER_MAX);
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L⁻¹ B`.
    pub fn solve_l(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    /// `L⁻ᵀ B`.
    pub fn solve_lt(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_l_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_lt_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// `(K + jitter I)⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_lt(&self.solve_l(b))
    }
}
