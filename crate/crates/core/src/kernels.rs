//! Kernel functions and dense Gram matrices.

use nalgebra::DMatrix;

use crate::data::first_non_finite;
use crate::error::{invalid, Result, TmdaError};

/// A positive-definite kernel.
///
/// `Rbf` is parameterized by the squared-distance scale `gamma`:
/// `k(x, y) = exp(-gamma * |x - y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return invalid(format!("rbf bandwidth must be positive, got {gamma}"));
        }
        Ok(KernelSpec::Rbf { gamma })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } => Self::rbf(gamma).map(|_| ()),
        }
    }

    /// Evaluate the kernel on two equal-length slices.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Rbf { gamma } => (-gamma * sq_dist(x, y)).exp(),
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf {gamma:e}"),
        }
    }
}

/// Gram matrix `K_ij = k(x_i, x_j)` over the columns of a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub spec: KernelSpec,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    match first_non_finite(x) {
        Some((r, c)) => invalid(format!("non-finite entry at ({r}, {c})")),
        None => Ok(()),
    }
}

/// Build the dense Gram matrix over the columns of `x`.
///
/// Only the upper triangle is evaluated; the lower one is mirrored, so the
/// result is exactly symmetric. For `Rbf` the diagonal is exactly one.
pub fn kernel_matrix(x: &DMatrix<f64>, spec: KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    let n = x.ncols();
    if n == 0 {
        return invalid("kernel matrix needs at least one column");
    }
    check_finite(x)?;
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let xj = x.column(j);
        let xj = xj.as_slice();
        for i in 0..=j {
            let v = if i == j && matches!(spec, KernelSpec::Rbf { .. }) {
                1.0
            } else {
                spec.eval(x.column(i).as_slice(), xj)
            };
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { values: k, spec })
}

/// Cross-kernel `K_ij = k(a_i, b_j)` between the columns of `a` and `b`.
pub fn cross_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if a.nrows() != b.nrows() {
        return invalid(format!(
            "feature dimension mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        ));
    }
    check_finite(a)?;
    check_finite(b)?;
    Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        spec.eval(a.column(i).as_slice(), b.column(j).as_slice())
    }))
}

/// Median heuristic: `1 / median` of the nonzero pairwise squared distances.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.ncols();
    if n < 2 {
        return invalid("median bandwidth needs at least two columns");
    }
    check_finite(x)?;
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for j in 1..n {
        for i in 0..j {
            let v = sq_dist(x.column(i).as_slice(), x.column(j).as_slice());
            if v > 0.0 {
                d2.push(v);
            }
        }
    }
    if d2.is_empty() {
        return Err(TmdaError::Degenerate(
            "all pairwise distances are zero".into(),
        ));
    }
    d2.sort_by(f64::total_cmp);
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    Ok(1.0 / median)
}
