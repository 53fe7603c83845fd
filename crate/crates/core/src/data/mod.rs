//! Datasets, the synthetic multi-manifold generator, text I/O and
//! intrinsic-dimension estimation.

mod intrinsic;
mod io;
mod synth;

pub use intrinsic::{estimate_intrinsic_dim, subspace_dim_from_estimate};
pub use io::{
    format_labels, format_matrix, format_model, parse_labels, parse_matrix, parse_model,
    read_labels, read_matrix, read_model, write_labels, write_matrix, write_model,
};
pub use synth::{
    generate_synthetic, generate_synthetic_parts, SynthConfig, SynthParts, TransferTask,
};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// A `d x n` matrix whose columns are points, with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if let Some((r, c)) = first_non_finite(&x) {
            return invalid(format!("non-finite entry at ({r}, {c})"));
        }
        Ok(Self { x, labels: None })
    }

    pub fn with_labels(x: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != x.ncols() {
            return invalid(format!("{} labels for {} columns", labels.len(), x.ncols()));
        }
        let mut ds = Self::new(x)?;
        ds.labels = Some(labels);
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Labels, or an error naming `what` when they are missing.
    pub fn require_labels(&self, what: &str) -> Result<&[i64]> {
        match &self.labels {
            Some(l) => Ok(l),
            None => invalid(format!("{what} requires labels")),
        }
    }

    /// Columns selected by `idx`, carrying labels along.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select_columns(idx.iter());
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        Dataset { x, labels }
    }
}

pub(crate) fn first_non_finite(x: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            if !x[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Horizontal concatenation `[a, b]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return invalid(format!(
            "feature dimension mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        ));
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    Ok(out)
}
