//! Empirical MMD, per-manifold MMD (M3D) and the coefficient matrices that
//! express them in trace form.
//!
//! Columns `[0, n_source)` of every joint matrix are source points and
//! `[n_source, n)` are target points.

use nalgebra::DMatrix;

use crate::error::{invalid, Result, TmdaError};
use crate::kernels::KernelMatrix;

const CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainSplit {
    pub n_source: usize,
    pub n_target: usize,
}

impl DomainSplit {
    pub fn new(n_source: usize, n_target: usize) -> Result<Self> {
        if n_source == 0 || n_target == 0 {
            return invalid(format!(
                "both domains need points (source {n_source}, target {n_target})"
            ));
        }
        Ok(Self { n_source, n_target })
    }

    pub fn n(&self) -> usize {
        self.n_source + self.n_target
    }

    #[inline]
    pub fn is_source(&self, i: usize) -> bool {
        i < self.n_source
    }
}

/// Joint manifold labels over source and target points, in `1..=n_manifolds`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifoldAssignment {
    labels: Vec<usize>,
    n_manifolds: usize,
}

impl ManifoldAssignment {
    pub fn new(labels: Vec<usize>, n_manifolds: usize) -> Result<Self> {
        if n_manifolds == 0 {
            return invalid("manifold count must be at least 1");
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l == 0 || l > n_manifolds)
        {
            return invalid(format!(
                "label {l} at position {i} outside 1..={n_manifolds}"
            ));
        }
        Ok(Self {
            labels,
            n_manifolds,
        })
    }

    /// Everything in manifold 1.
    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![1; n],
            n_manifolds: 1,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_manifolds(&self) -> usize {
        self.n_manifolds
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per manifold: (source member indices, target member indices).
    fn members(&self, split: DomainSplit) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = vec![(Vec::new(), Vec::new()); self.n_manifolds];
        for (i, &l) in self.labels.iter().enumerate() {
            if split.is_source(i) {
                out[l - 1].0.push(i);
            } else {
                out[l - 1].1.push(i);
            }
        }
        out
    }
}

/// Per-manifold MMD average together with how many manifolds were skipped
/// for lacking points on one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M3dValue {
    pub value: f64,
    pub active: usize,
    pub skipped: usize,
}

fn check_size(k: &KernelMatrix, split: DomainSplit) -> Result<()> {
    if k.values.nrows() != split.n() || k.values.ncols() != split.n() {
        return invalid(format!(
            "kernel is {}x{} but split covers {} points",
            k.values.nrows(),
            k.values.ncols(),
            split.n()
        ));
    }
    Ok(())
}

fn clamp(v: f64) -> f64 {
    if (-CLAMP_EPS..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

fn block_mean(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let mut s = 0.0;
    for &j in cols {
        for &i in rows {
            s += k[(i, j)];
        }
    }
    s / (rows.len() * cols.len()) as f64
}

fn mmd_of(k: &DMatrix<f64>, src: &[usize], tgt: &[usize]) -> f64 {
    block_mean(k, src, src) + block_mean(k, tgt, tgt) - 2.0 * block_mean(k, src, tgt)
}

/// Biased (V-statistic) MMD between the source and target blocks of `k`.
pub fn empirical_mmd(k: &KernelMatrix, split: DomainSplit) -> Result<f64> {
    check_size(k, split)?;
    let src: Vec<usize> = (0..split.n_source).collect();
    let tgt: Vec<usize> = (split.n_source..split.n()).collect();
    Ok(clamp(mmd_of(&k.values, &src, &tgt)))
}

/// Average MMD over the manifolds that have both source and target members.
pub fn empirical_m3d(
    k: &KernelMatrix,
    split: DomainSplit,
    assign: &ManifoldAssignment,
) -> Result<M3dValue> {
    check_size(k, split)?;
    if assign.len() != split.n() {
        return invalid(format!(
            "assignment has {} labels for {} points",
            assign.len(),
            split.n()
        ));
    }
    let mut total = 0.0;
    let mut active = 0;
    for (src, tgt) in assign.members(split) {
        if src.is_empty() || tgt.is_empty() {
            continue;
        }
        total += mmd_of(&k.values, &src, &tgt);
        active += 1;
    }
    if active == 0 {
        return Err(TmdaError::Degenerate(
            "no manifold has both source and target members".into(),
        ));
    }
    let skipped = assign.n_manifolds() - active;
    if skipped > 0 {
        log::debug!("m3d: skipped {skipped} one-sided manifold(s)");
    }
    Ok(M3dValue {
        value: clamp(total / active as f64),
        active,
        skipped,
    })
}

/// Coefficient matrices `M^m` with `tr(F M^m F^T)` equal to the squared
/// mean-embedding gap of manifold `m` for features `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyCoefficients {
    pub matrices: Vec<DMatrix<f64>>,
    pub active: Vec<bool>,
}

impl DiscrepancyCoefficients {
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// `(1/|active|) sum_m M^m`, the matrix whose trace form is the M3D.
    pub fn averaged(&self) -> DMatrix<f64> {
        let n = self.matrices.first().map_or(0, |m| m.nrows());
        let mut out = DMatrix::zeros(n, n);
        for (m, &a) in self.matrices.iter().zip(&self.active) {
            if a {
                out += m;
            }
        }
        let c = self.n_active();
        if c > 0 {
            out /= c as f64;
        }
        out
    }

    /// `(1/|active|) sum_m tr(F M^m F^T)` for a `k x n` feature matrix.
    pub fn trace_form(&self, f: &DMatrix<f64>) -> f64 {
        let m = self.averaged();
        (f * m * f.transpose()).trace()
    }
}

/// Build `M^m` for every manifold.
///
/// Entries are `1/(ns*ns)` on source-source pairs, `1/(nt*nt)` on
/// target-target pairs and `-1/(ns*nt)` on mixed pairs of the manifold.
/// Manifolds with no source or no target member are inactive and all zero.
pub fn build_coefficients(
    split: DomainSplit,
    assign: &ManifoldAssignment,
) -> Result<DiscrepancyCoefficients> {
    if assign.len() != split.n() {
        return invalid(format!(
            "assignment has {} labels for {} points",
            assign.len(),
            split.n()
        ));
    }
    let n = split.n();
    let mut matrices = Vec::with_capacity(assign.n_manifolds());
    let mut active = Vec::with_capacity(assign.n_manifolds());
    for (src, tgt) in assign.members(split) {
        let mut m = DMatrix::zeros(n, n);
        let ok = !src.is_empty() && !tgt.is_empty();
        if ok {
            let ns = src.len() as f64;
            let nt = tgt.len() as f64;
            let ss = 1.0 / (ns * ns);
            let tt = 1.0 / (nt * nt);
            let st = -1.0 / (ns * nt);
            for &i in &src {
                for &j in &src {
                    m[(i, j)] = ss;
                }
                for &j in &tgt {
                    m[(i, j)] = st;
                    m[(j, i)] = st;
                }
            }
            for &i in &tgt {
                for &j in &tgt {
                    m[(i, j)] = tt;
                }
            }
        }
        matrices.push(m);
        active.push(ok);
    }
    Ok(DiscrepancyCoefficients { matrices, active })
}
