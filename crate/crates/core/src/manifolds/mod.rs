//! Manifold discovery: sparse self-representation by ADMM and
//! normalized-cut spectral clustering of the resulting affinity.

mod admm;
mod kmeans;
mod ncut;

pub use admm::{admm_affinity, AdmmConfig, AdmmState};
pub use kmeans::{kmeans, KMeansResult};
pub use ncut::ncut_cluster;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::kernels::dot;

/// Sparse self-representation coefficients with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    values: DMatrix<f64>,
}

impl AffinityMatrix {
    /// Wraps `values`, zeroing the diagonal.
    pub fn new(mut values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return invalid(format!(
                "affinity must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("affinity has non-finite entries");
        }
        values.fill_diagonal(0.0);
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: DMatrix::zeros(n, n),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Sparsity weight `min_i max_{j != i} |x_i^T x_j|`.
pub fn default_mu(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.ncols();
    if n < 2 {
        return invalid("default mu needs at least two columns");
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let xi = x.column(i);
        let mut m = 0.0f64;
        for j in 0..n {
            if j != i {
                m = m.max(dot(xi.as_slice(), x.column(j).as_slice()).abs());
            }
        }
        best = best.min(m);
    }
    Ok(best)
}

/// Elementwise shrinkage `(|v| - mu)_+ sgn(v)`.
pub fn soft_threshold(v: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    v.map(|x| shrink(x, mu))
}

#[inline]
pub(crate) fn shrink(x: f64, mu: f64) -> f64 {
    if x > mu {
        x - mu
    } else if x < -mu {
        x + mu
    } else {
        0.0
    }
}
