//! Shared multivariate-normal evaluation helpers.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Log-density terms below this are flushed to an exact zero instead of being
/// exponentiated into the subnormal range.
pub(crate) const LOG_FLUSH: f64 = -700.0;

pub(crate) fn exp_flush(log_value: f64) -> f64 {
    if log_value < LOG_FLUSH {
        0.0
    } else {
        log_value.exp()
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// A normal density N(mean, cov) with its Cholesky factor precomputed.
#[derive(Clone, Debug)]
pub(crate) struct GaussianPdf {
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianPdf {
    /// Fails with [`Error::NotPositiveDefinite`] when `cov` has no Cholesky factor.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: cov.nrows(),
            });
        }
        let chol = nalgebra::Cholesky::new(cov).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self::from_cholesky(mean, chol))
    }

    pub fn from_cholesky(mean: DVector<f64>, chol: nalgebra::Cholesky<f64, Dyn>) -> Self {
        let dim = mean.len();
        let log_det: f64 = (0..dim).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Self { mean, chol, log_norm }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Lower-triangular Cholesky factor of the covariance.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.mean.len());
        let centered = x - &self.mean;
        let solved = self.chol.solve(&centered);
        self.log_norm - 0.5 * centered.dot(&solved)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        exp_flush(self.log_pdf(x))
    }

    /// Returns `cov^{-1} (x - mean)`, the factor appearing in the pdf gradient.
    pub fn solve_centered(&self, x: &DVector<f64>) -> DVector<f64> {
        let centered = x - &self.mean;
        self.chol.solve(&centered)
    }

    /// Returns `cov^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }
}
