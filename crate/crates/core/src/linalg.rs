//! Symmetric positive-definite helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factorizes `m`, retrying once with a jitter of `1e-10 * trace / dim`
    /// on the diagonal.
    pub fn new(m: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::Dimension {
                context,
                expected: n,
                found: m.ncols(),
            });
        }
        let sym = (m + m.transpose()) * 0.5;
        if let Some(chol) = sym.clone().cholesky() {
            return Ok(Self { chol });
        }
        if n == 0 {
            return Err(not_pd(&sym, context));
        }
        let jitter = 1e-10 * sym.trace().abs() / n.max(1) as f64;
        let mut jittered = sym.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        match jittered.cholesky() {
            Some(chol) => Ok(Self { chol }),
            None => Err(not_pd(&sym, context)),
        }
    }

    /// Factorizes `m` without any jitter; singular input is an error.
    pub fn strict(m: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                context,
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let sym = (m + m.transpose()) * 0.5;
        match sym.clone().cholesky() {
            Some(chol) => Ok(Self { chol }),
            None => Err(not_pd(&sym, context)),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `M = L L'`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `x' M^{-1} x`.
    pub fn quad_inv(&self, x: &DVector<f64>) -> f64 {
        let mut w = x.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w.norm_squared()
    }

    /// `L'^{-1} z`; for standard normal `z` this has covariance `M^{-1}`.
    pub fn solve_upper_transpose(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut w = z.clone();
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut w);
        w
    }

    /// `L z` for a vector of standard normals `z`.
    pub fn scale(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol.l() * z
    }
}

fn not_pd(m: &DMatrix<f64>, context: &'static str) -> Error {
    let diag = m.diagonal();
    let min_diag = diag.min();
    let max_diag = diag.max();
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo.abs() > 0.0 { (hi / lo).abs() } else { f64::INFINITY };
    Error::NotPositiveDefinite {
        context,
        min_diag,
        max_diag,
        condition,
    }
}
