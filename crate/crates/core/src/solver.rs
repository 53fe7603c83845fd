//! The alternating solver: sparse affinity, re-clustering, discrepancy
//! coefficients and the projection eigen-solve, repeated until both the
//! affinity and the projection stop moving.
//!
//! A projection lives in the span of a *basis* matrix `F`. For a kernelized
//! mapping `F` is the `n x n` Gram matrix and points embed as `W^T K(train, x)`.
//! For the raw linear mapping `F` is the `d x n` data matrix itself and
//! points embed as `W^T x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{estimate_intrinsic_dim, hstack, subspace_dim_from_estimate, Dataset};
use crate::discrepancy::{
    build_coefficients, DiscrepancyCoefficients, DomainSplit, ManifoldAssignment,
};
use crate::error::{invalid, Result, TmdaError};
use crate::kernels::{cross_kernel, kernel_matrix, median_bandwidth, KernelSpec};
use crate::linalg::{fix_signs, frob_sq_diff, generalized_smallest, range_restricted_smallest};
use crate::manifolds::{admm_affinity, ncut_cluster, AdmmConfig, AffinityMatrix};

/// Relative level below which eigenvalues of `F F^T` count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Neighbourhood size for the intrinsic-dimension estimate when `k` is unset.
pub const DEFAULT_DIM_NEIGHBORS: usize = 10;

/// How points are mapped before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mapping {
    /// `W^T x` directly on the input features.
    Raw,
    Linear,
    Rbf,
}

impl std::fmt::Display for Mapping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mapping::Raw => "raw",
            Mapping::Linear => "linear",
            Mapping::Rbf => "rbf",
        })
    }
}

/// Which objective the fit optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Alternate affinity, clustering and per-manifold discrepancy.
    Full,
    /// Alternate, but align only the global source/target discrepancy.
    GlobalMmd,
    /// One affinity solve without coupling, one clustering, one projection.
    Decoupled,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitMode::Full => "full",
            FitMode::GlobalMmd => "global_mmd",
            FitMode::Decoupled => "decoupled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmdaConfig {
    /// Weight of the projected-space reconstruction term.
    pub alpha: f64,
    /// Weight of the discrepancy term.
    pub beta: f64,
    pub n_manifolds: usize,
    /// Subspace dimension; `None` estimates it from the joint data.
    pub k: Option<usize>,
    pub mapping: Mapping,
    /// Rbf `gamma`; `None` uses the median heuristic on the joint data.
    pub bandwidth: Option<f64>,
    pub max_outer: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub mode: FitMode,
    /// Inner solver settings. Its `alpha` is overwritten by the outer `alpha`.
    pub admm: AdmmConfig,
}

impl Default for TmdaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 100.0,
            n_manifolds: 5,
            k: None,
            mapping: Mapping::Rbf,
            bandwidth: None,
            max_outer: 50,
            epsilon: 1e-6,
            seed: 0,
            mode: FitMode::Full,
            admm: AdmmConfig::default(),
        }
    }
}

impl TmdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return invalid(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.n_manifolds == 0 {
            return invalid("n_manifolds must be at least 1");
        }
        if self.k == Some(0) {
            return invalid("k must be at least 1");
        }
        if let Some(g) = self.bandwidth {
            KernelSpec::rbf(g)?;
        }
        if self.max_outer == 0 {
            return invalid("max_outer must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        self.admm.validate()
    }

    fn inner(&self, alpha: f64) -> AdmmConfig {
        AdmmConfig {
            alpha,
            epsilon: self.admm.epsilon,
            ..self.admm.clone()
        }
    }
}

/// Projection coefficients, one column per embedding dimension.
///
/// `w` is `basis_dim x k` and satisfies `W^T F F^T W = I`. When `F F^T` is
/// near singular the columns lie in its numerical range, of dimension `rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w: DMatrix<f64>,
    /// Pencil eigenvalues of the selected directions, ascending.
    pub eigenvalues: DVector<f64>,
    pub rank: usize,
}

impl ProjectionWeights {
    pub fn k(&self) -> usize {
        self.w.ncols()
    }
}

/// The symmetric-definite pencil `(C, B)` of the projection step.
#[derive(Debug, Clone)]
pub struct ProjectionPencil {
    pub c: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Eigenvalues of `B` at or below this are treated as zero; `0` when
    /// `B` is comfortably definite.
    pub floor: f64,
}

impl ProjectionPencil {
    /// `C = I + F (beta Mbar + alpha (I - A)(I - A)^T) F^T`,
    /// `B = F F^T`. The floor is `1e-12 tr(F F^T) / dim` when the smallest
    /// eigenvalue of `B` is below that level, and zero otherwise.
    pub fn build(
        basis: &DMatrix<f64>,
        affinity: &AffinityMatrix,
        discrepancy: &DMatrix<f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let n = basis.ncols();
        let dim = basis.nrows();
        if affinity.n() != n || discrepancy.nrows() != n || discrepancy.ncols() != n {
            return invalid(format!(
                "basis has {n} columns but affinity is {0}x{0} and coefficients {1}x{2}",
                affinity.n(),
                discrepancy.nrows(),
                discrepancy.ncols()
            ));
        }
        let i_minus_a = DMatrix::identity(n, n) - affinity.values();
        let mut inner = discrepancy * beta;
        if alpha != 0.0 {
            inner.gemm(alpha, &i_minus_a, &i_minus_a.transpose(), 1.0);
        }
        let mut c = basis * inner * basis.transpose();
        for i in 0..dim {
            c[(i, i)] += 1.0;
        }
        crate::linalg::symmetrize(&mut c);
        let mut b = basis * basis.transpose();
        crate::linalg::symmetrize(&mut b);
        let level = RANK_TOL * b.trace() / dim as f64;
        let level = if level > 0.0 { level } else { RANK_TOL };
        let smallest = b.symmetric_eigenvalues().min();
        let floor = if smallest >= level { 0.0 } else { level };
        Ok(Self { c, b, floor })
    }

    /// `tr(W^T C W)`
    pub fn objective(&self, w: &DMatrix<f64>) -> f64 {
        (w.transpose() * &self.c * w).trace()
    }
}

/// Solve the projection step: the `k` smallest generalized eigenvectors of
/// the pencil, B-orthonormal, each flipped so its largest-magnitude entry is
/// positive.
pub fn solve_projection(
    basis: &DMatrix<f64>,
    affinity: &AffinityMatrix,
    coeffs: &DiscrepancyCoefficients,
    alpha: f64,
    beta: f64,
    k: usize,
) -> Result<ProjectionWeights> {
    let pencil = ProjectionPencil::build(basis, affinity, &coeffs.averaged(), alpha, beta)?;
    solve_pencil(&pencil, k)
}

pub fn solve_pencil(pencil: &ProjectionPencil, k: usize) -> Result<ProjectionWeights> {
    if k == 0 || k > pencil.c.nrows() {
        return invalid(format!(
            "subspace dimension {k} outside 1..={}",
            pencil.c.nrows()
        ));
    }
    let dim = pencil.b.nrows();
    let (eigenvalues, mut w, rank) = if pencil.floor == 0.0 {
        let (vals, w) = generalized_smallest(&pencil.c, &pencil.b, k)?;
        (vals, w, dim)
    } else if let Some(found) = range_restricted_smallest(&pencil.c, &pencil.b, pencil.floor, k) {
        // null directions of B add to the objective and nothing to the
        // constraint, so the optimum never uses them
        found
    } else {
        // range too small for k directions: fall back to a ridge
        let mut b = pencil.b.clone();
        for i in 0..dim {
            b[(i, i)] += pencil.floor;
        }
        let (vals, w) = generalized_smallest(&pencil.c, &b, k)?;
        (vals, w, dim)
    };
    fix_signs(&mut w);
    Ok(ProjectionWeights {
        w,
        eigenvalues,
        rank,
    })
}

/// How a fitted model embeds points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Raw,
    Kernel(KernelSpec),
}

impl Basis {
    fn matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            Basis::Raw => Ok(x.clone()),
            Basis::Kernel(spec) => Ok(kernel_matrix(x, spec)?.values),
        }
    }
}

/// One row of the fit log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Per-manifold discrepancy of the embedded joint data.
    pub m3d: f64,
    /// Full objective value at the new iterate.
    pub objective: f64,
    /// `|A_p - A_{p-1}|_F^2`
    pub a_change: f64,
    /// `|W_p - W_{p-1}|_F^2`
    pub w_change: f64,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub skipped_manifolds: usize,
    /// Pencil eigenvalues of the chosen directions.
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TmdaModel {
    pub weights: ProjectionWeights,
    pub affinity: AffinityMatrix,
    pub assignment: ManifoldAssignment,
    pub basis: Basis,
    /// Joint training matrix `[X_s, X_t]`.
    pub train: DMatrix<f64>,
    pub split: DomainSplit,
    pub mode: FitMode,
    pub mu: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

impl TmdaModel {
    pub fn k(&self) -> usize {
        self.weights.k()
    }

    /// Embedded source and target training columns.
    pub fn embedded_training(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let z = transform(self, &self.train)?;
        let ns = self.split.n_source;
        Ok((
            z.columns(0, ns).into_owned(),
            z.columns(ns, self.split.n_target).into_owned(),
        ))
    }
}

/// Subspace dimension from the config, or from the intrinsic-dimension
/// estimate of `x` when unset. Never exceeds `limit`.
pub fn resolve_k(cfg: &TmdaConfig, x: &DMatrix<f64>, limit: usize) -> Result<usize> {
    let k = match cfg.k {
        Some(k) => k,
        None => {
            let nb = DEFAULT_DIM_NEIGHBORS
                .min(x.ncols().saturating_sub(1))
                .max(2);
            let est = estimate_intrinsic_dim(x, nb)?;
            subspace_dim_from_estimate(est, x.nrows())
        }
    };
    if k > limit {
        return invalid(format!("subspace dimension {k} exceeds {limit}"));
    }
    Ok(k)
}

/// Resolve the basis for `cfg` on the joint matrix.
pub fn resolve_basis(cfg: &TmdaConfig, x: &DMatrix<f64>) -> Result<Basis> {
    Ok(match cfg.mapping {
        Mapping::Raw => Basis::Raw,
        Mapping::Linear => Basis::Kernel(KernelSpec::Linear),
        Mapping::Rbf => {
            let gamma = match cfg.bandwidth {
                Some(g) => g,
                None => median_bandwidth(x)?,
            };
            Basis::Kernel(KernelSpec::rbf(gamma)?)
        }
    })
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    basis: &'a DMatrix<f64>,
    mu: f64,
    alpha: f64,
    beta: f64,
}

impl Objective<'_> {
    /// Full objective with the discrepancy term in averaged trace form.
    fn value(&self, a: &AffinityMatrix, w: &DMatrix<f64>, disc: &DMatrix<f64>) -> f64 {
        let av = a.values();
        let recon = self.x - self.x * av;
        let phi = w.transpose() * self.basis;
        let proj = &phi - &phi * av;
        let l1: f64 = av.iter().map(|v| v.abs()).sum();
        0.5 * recon.norm_squared()
            + self.mu * l1
            + 0.5 * self.alpha * proj.norm_squared()
            + 0.5 * self.beta * (&phi * disc * phi.transpose()).trace()
            + 0.5 * w.norm_squared()
    }
}

/// Fit a projection that aligns `source` and `target`.
///
/// Starting from `W = 0`, each outer iteration solves the sparse affinity
/// for the current projection, re-clusters it into `n_manifolds` groups,
/// rebuilds the discrepancy coefficients and solves for the next projection.
/// The loop stops once both `|A_p - A_{p-1}|_F^2` and `|W_p - W_{p-1}|_F^2`
/// are within `epsilon`, or after `max_outer` iterations.
pub fn fit(source: &Dataset, target: &Dataset, cfg: &TmdaConfig) -> Result<TmdaModel> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return invalid(format!(
            "source has dimension {}, target {}",
            source.dim(),
            target.dim()
        ));
    }
    let split = DomainSplit::new(source.len(), target.len())?;
    let x = hstack(&source.x, &target.x)?;
    let n = split.n();
    let basis_kind = resolve_basis(cfg, &x)?;
    let basis = basis_kind.matrix(&x)?;
    let k = resolve_k(cfg, &x, basis.nrows())?;
    if cfg.n_manifolds > n {
        return invalid(format!("{} manifolds for {n} points", cfg.n_manifolds));
    }

    let mut w = DMatrix::zeros(basis.nrows(), k);
    let mut prev_a: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last = None;

    let rounds = match cfg.mode {
        FitMode::Decoupled => 1,
        _ => cfg.max_outer,
    };
    for p in 1..=rounds {
        let alpha = match cfg.mode {
            FitMode::Decoupled => 0.0,
            _ => cfg.alpha,
        };
        let (affinity, state) = admm_affinity(&x, &basis, &w, &cfg.inner(alpha))?;
        let assignment = match cfg.mode {
            FitMode::GlobalMmd => ManifoldAssignment::single(n),
            _ => ncut_cluster(&affinity, cfg.n_manifolds, cfg.seed)?,
        };
        let coeffs = build_coefficients(split, &assignment)?;
        let disc = coeffs.averaged();
        let pencil = ProjectionPencil::build(&basis, &affinity, &disc, cfg.alpha, cfg.beta)?;
        let weights = solve_pencil(&pencil, k)?;

        let a_change = prev_a
            .as_ref()
            .map_or(f64::INFINITY, |pa| frob_sq_diff(pa, affinity.values()));
        let w_change = if p == 1 {
            f64::INFINITY
        } else {
            frob_sq_diff(&w, &weights.w)
        };
        let objective = Objective {
            x: &x,
            basis: &basis,
            mu: state.mu,
            alpha: cfg.alpha,
            beta: cfg.beta,
        }
        .value(&affinity, &weights.w, &disc);
        let phi = weights.w.transpose() * &basis;
        let m3d = coeffs.trace_form(&phi);
        trace.push(TraceEntry {
            iteration: p,
            m3d,
            objective,
            a_change,
            w_change,
            admm_iterations: state.iteration,
            admm_converged: state.converged,
            skipped_manifolds: coeffs.matrices.len() - coeffs.n_active(),
            eigenvalues: weights.eigenvalues.iter().copied().collect(),
        });
        if !(objective.is_finite() && m3d.is_finite()) {
            return Err(TmdaError::FitDiverged {
                iteration: p,
                trace,
            });
        }
        log::debug!(
            "outer {p}: objective {objective:.6e} m3d {m3d:.4e} dA {a_change:.3e} dW {w_change:.3e}"
        );

        w = weights.w.clone();
        prev_a = Some(affinity.values().clone());
        let done = a_change <= cfg.epsilon && w_change <= cfg.epsilon;
        last = Some((weights, affinity, assignment, state.mu));
        if done {
            converged = true;
            break;
        }
    }
    if cfg.mode == FitMode::Decoupled {
        converged = true;
    }

    let (weights, affinity, assignment, mu) = last.expect("at least one outer iteration");
    Ok(TmdaModel {
        weights,
        affinity,
        assignment,
        basis: basis_kind,
        train: x,
        split,
        mode: cfg.mode,
        mu,
        converged,
        trace,
    })
}

/// Embed new columns: `W^T K(train, x_new)` for kernel bases, `W^T x_new`
/// for the raw basis. Output is `k x m`.
pub fn transform(model: &TmdaModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    embed(model.basis, &model.weights.w, &model.train, x_new)
}

fn embed(
    basis: Basis,
    w: &DMatrix<f64>,
    train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if x_new.nrows() != train.nrows() {
        return invalid(format!(
            "model expects dimension {}, got {}",
            train.nrows(),
            x_new.nrows()
        ));
    }
    let feats = match basis {
        Basis::Raw => x_new.clone(),
        Basis::Kernel(spec) => cross_kernel(train, x_new, spec)?,
    };
    Ok(w.transpose() * feats)
}

/// The persistable part of a fitted model: enough to embed new points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub basis: Basis,
    /// `basis_dim x k`
    pub w: DMatrix<f64>,
    pub train: DMatrix<f64>,
    pub split: DomainSplit,
    pub assignment: ManifoldAssignment,
}

impl ProjectionModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.train.ncols();
        let dim = match self.basis {
            Basis::Raw => self.train.nrows(),
            Basis::Kernel(_) => n,
        };
        if self.w.nrows() != dim {
            return invalid(format!("W has {} rows, basis needs {dim}", self.w.nrows()));
        }
        if self.split.n() != n || self.assignment.len() != n {
            return invalid(format!(
                "split covers {} and assignment {} of {n} training columns",
                self.split.n(),
                self.assignment.len()
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn transform(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        embed(self.basis, &self.w, &self.train, x_new)
    }
}

impl TmdaModel {
    pub fn projection(&self) -> ProjectionModel {
        ProjectionModel {
            basis: self.basis,
            w: self.weights.w.clone(),
            train: self.train.clone(),
            split: self.split,
            assignment: self.assignment.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_pencil() {
        let k = DMatrix::identity(2, 2);
        let a = AffinityMatrix::zeros(2);
        let coeffs = build_coefficients(
            DomainSplit::new(1, 1).unwrap(),
            &ManifoldAssignment::single(2),
        )
        .unwrap();
        let p = solve_projection(&k, &a, &coeffs, 1.0, 0.0, 1).unwrap();
        // C = 2I, B = I
        assert_eq!(p.rank, 2);
        assert!((p.eigenvalues[0] - 2.0).abs() < 1e-12);
        let pencil = ProjectionPencil::build(&k, &a, &coeffs.averaged(), 1.0, 0.0).unwrap();
        assert!((pencil.objective(&p.w) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_basis_solves_on_range() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let a = AffinityMatrix::zeros(2);
        let m = DMatrix::zeros(2, 2);
        let pencil = ProjectionPencil::build(&f, &a, &m, 0.0, 0.0).unwrap();
        // F F^T = diag(2, 0)
        assert!((pencil.floor - 1e-12).abs() < 1e-24);
        let p = solve_pencil(&pencil, 1).unwrap();
        assert_eq!(p.rank, 1);
        assert!((p.w[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(p.w[(1, 0)], 0.0);
        // k beyond the range falls back to a ridge
        let p = solve_pencil(&pencil, 2).unwrap();
        assert_eq!(p.rank, 2);
    }

    #[test]
    fn projection_beats_random_feasible_points() {
        let mut r = rng(17);
        let n = 12;
        let x = DMatrix::from_fn(3, n, |_, _| r.gen_range(-1.0..1.0));
        let k = kernel_matrix(&x, KernelSpec::Rbf { gamma: 0.5 })
            .unwrap()
            .values;
        let a = AffinityMatrix::new(DMatrix::from_fn(n, n, |_, _| r.gen_range(-0.2..0.2))).unwrap();
        let assign = ManifoldAssignment::new((0..n).map(|i| 1 + i % 2).collect(), 2).unwrap();
        let coeffs = build_coefficients(DomainSplit::new(6, 6).unwrap(), &assign).unwrap();
        let pencil = ProjectionPencil::build(&k, &a, &coeffs.averaged(), 0.01, 100.0).unwrap();
        let p = solve_pencil(&pencil, 3).unwrap();
        let best = pencil.objective(&p.w);
        let g = p.w.transpose() * &pencil.b * &p.w;
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-9);
        for _ in 0..20 {
            let cand = DMatrix::from_fn(n, 3, |_, _| r.gen_range(-1.0..1.0));
            let cand = b_orthonormalize(&cand, &pencil.b);
            assert!(pencil.objective(&cand) >= best - 1e-8);
        }
    }

    // Gram-Schmidt in the B inner product
    fn b_orthonormalize(v: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = v.clone();
        for j in 0..v.ncols() {
            for i in 0..j {
                let proj = (out.column(i).transpose() * b * out.column(j))[(0, 0)];
                let ci = out.column(i).into_owned();
                out.column_mut(j).axpy(-proj, &ci, 1.0);
            }
            let norm = (out.column(j).transpose() * b * out.column(j))[(0, 0)].sqrt();
            out.column_mut(j).scale_mut(1.0 / norm);
        }
        out
    }

    #[test]
    fn k_too_large() {
        let k = DMatrix::identity(3, 3);
        let coeffs = build_coefficients(
            DomainSplit::new(2, 1).unwrap(),
            &ManifoldAssignment::single(3),
        )
        .unwrap();
        assert!(solve_projection(&k, &AffinityMatrix::zeros(3), &coeffs, 0.0, 1.0, 4).is_err());
    }

    fn toy_task(seed: u64) -> (Dataset, Dataset) {
        let mut r = rng(seed);
        let xs = DMatrix::from_fn(4, 10, |_, _| r.gen_range(-1.0..1.0));
        let xt = DMatrix::from_fn(4, 8, |_, _| r.gen_range(-1.0..1.0) + 0.3);
        let ys = (0..10).map(|i| 1 + (i % 2) as i64).collect();
        (
            Dataset::with_labels(xs, ys).unwrap(),
            Dataset::new(xt).unwrap(),
        )
    }

    fn small_cfg() -> TmdaConfig {
        TmdaConfig {
            n_manifolds: 2,
            k: Some(2),
            max_outer: 4,
            ..Default::default()
        }
    }

    #[test]
    fn decoupled_uses_uncoupled_affinity() {
        let (s, t) = toy_task(1);
        let cfg = TmdaConfig {
            mode: FitMode::Decoupled,
            ..small_cfg()
        };
        let model = fit(&s, &t, &cfg).unwrap();
        let x = hstack(&s.x, &t.x).unwrap();
        let basis = resolve_basis(&cfg, &x).unwrap().matrix(&x).unwrap();
        let uncoupled = AdmmConfig {
            alpha: 0.0,
            ..cfg.admm.clone()
        };
        let (a, _) = admm_affinity(&x, &basis, &DMatrix::zeros(x.ncols(), 2), &uncoupled).unwrap();
        assert_eq!(model.affinity, a);
        assert_eq!(model.trace.len(), 1);
    }

    #[test]
    fn fit_is_deterministic() {
        let (s, t) = toy_task(2);
        let a = fit(&s, &t, &small_cfg()).unwrap();
        let b = fit(&s, &t, &small_cfg()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.assignment, b.assignment);
        assert!(a.trace.iter().all(|e| e.m3d.is_finite()));
    }

    #[test]
    fn transform_shapes_and_duplicates() {
        let (s, t) = toy_task(3);
        let model = fit(&s, &t, &small_cfg()).unwrap();
        let z = transform(&model, &model.train).unwrap();
        assert_eq!(z.shape(), (2, 18));
        let dup = model.train.select_columns([4, 4, 0].iter());
        let zd = transform(&model, &dup).unwrap();
        assert_eq!(zd.column(0), z.column(4));
        assert_eq!(zd.column(1), z.column(4));
        assert!(transform(&model, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn linear_transform_two_paths() {
        let (s, t) = toy_task(4);
        let cfg = TmdaConfig {
            mapping: Mapping::Linear,
            ..small_cfg()
        };
        let model = fit(&s, &t, &cfg).unwrap();
        let mut r = rng(5);
        let new = DMatrix::from_fn(4, 6, |_, _| r.gen_range(-1.0..1.0));
        let via_kernel = transform(&model, &new).unwrap();
        // (X W)^T x_new
        let direct = (&model.train * &model.weights.w).transpose() * &new;
        assert!((via_kernel - direct).amax() < 1e-10);
    }

    #[test]
    fn constraint_holds_after_fit() {
        let (s, t) = toy_task(6);
        for mapping in [Mapping::Raw, Mapping::Linear, Mapping::Rbf] {
            let cfg = TmdaConfig {
                mapping,
                ..small_cfg()
            };
            let model = fit(&s, &t, &cfg).unwrap();
            let x = &model.train;
            let basis = model.basis.matrix(x).unwrap();
            let w = &model.weights.w;
            let g = w.transpose() * &basis * basis.transpose() * w;
            assert!((g - DMatrix::identity(2, 2)).amax() <= 1e-6, "{mapping}");
        }
    }

    #[test]
    fn config_validation() {
        let (s, t) = toy_task(7);
        let bad = TmdaConfig {
            n_manifolds: 0,
            ..small_cfg()
        };
        assert!(fit(&s, &t, &bad).is_err());
        let mismatch = Dataset::new(DMatrix::zeros(3, 4)).unwrap();
        assert!(fit(&s, &mismatch, &small_cfg()).is_err());
    }
}
