use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{default_mu, shrink, AffinityMatrix};
use crate::error::{invalid, Result, TmdaError};
use crate::linalg::{frob_sq, frob_sq_diff};

/// Settings for the sparse self-representation solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Sparsity weight; `None` uses [`default_mu`] on the data.
    pub mu: Option<f64>,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    /// Weight of the projected-space reconstruction term.
    pub alpha: f64,
    pub max_iter: usize,
    /// Bound on both squared residuals.
    pub epsilon: f64,
    /// Scale data columns to unit L2 norm before the input-space term.
    pub normalize_columns: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            mu: None,
            rho: 1.0,
            alpha: 0.01,
            max_iter: 100,
            epsilon: 1e-6,
            normalize_columns: false,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return invalid(format!("mu must be >= 0, got {mu}"));
            }
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return invalid(format!("rho must be > 0, got {}", self.rho));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be at least 1");
        }
        Ok(())
    }
}

/// Final iterate and convergence record of one ADMM run.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub a: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub iteration: usize,
    /// `|A - Z|_F^2`
    pub primal_residual: f64,
    /// `|A^q - A^{q-1}|_F^2`
    pub change_residual: f64,
    pub converged: bool,
    /// The sparsity weight actually used.
    pub mu: f64,
    pub primal_history: Vec<f64>,
    pub change_history: Vec<f64>,
}

/// Solve
///
/// ```text
/// min_A  1/2 |X - XA|_F^2 + mu |A|_1 + alpha/2 |P - PA|_F^2   s.t. diag(A) = 0
/// ```
///
/// with `P = W^T F`, where `F` is the basis matrix (kernel matrix or raw data)
/// and `W` the current projection. `W` may be all zero, in which case the
/// coupling term vanishes.
///
/// Splitting `A = Z` gives the iteration
///
/// ```text
/// (G + rho I) Z = G + rho A + Delta         G = X^T X + alpha P^T P
/// A = offdiag(T_{mu/rho}(Z - Delta / rho))
/// Delta += rho (A - Z)
/// ```
///
/// started from all-zero iterates. `(G + rho I)` is inverted once per call.
pub fn admm_affinity(
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    w: &DMatrix<f64>,
    cfg: &AdmmConfig,
) -> Result<(AffinityMatrix, AdmmState)> {
    cfg.validate()?;
    let n = x.ncols();
    if n < 2 {
        return invalid("ADMM needs at least two points");
    }
    if basis.ncols() != n {
        return invalid(format!("basis has {} columns, data has {n}", basis.ncols()));
    }
    if w.nrows() != basis.nrows() {
        return invalid(format!(
            "projection has {} rows, basis has {}",
            w.nrows(),
            basis.nrows()
        ));
    }

    let x = if cfg.normalize_columns {
        normalize_columns(x)
    } else {
        x.clone()
    };
    let mu = match cfg.mu {
        Some(mu) => mu,
        None => default_mu(&x)?,
    };
    let rho = cfg.rho;

    let mut gram = x.transpose() * &x;
    if cfg.alpha > 0.0 && w.iter().any(|&v| v != 0.0) {
        let p = w.transpose() * basis;
        gram += (p.transpose() * &p) * cfg.alpha;
    }
    let mut lhs = gram.clone();
    for i in 0..n {
        lhs[(i, i)] += rho;
    }
    let lhs_inv = lhs
        .cholesky()
        .ok_or_else(|| TmdaError::Numerical("ADMM system is not positive definite".into()))?
        .inverse();
    // Z = inv*G + inv*(rho A + Delta)
    let base = &lhs_inv * &gram;

    let mut a = DMatrix::zeros(n, n);
    let mut z = DMatrix::zeros(n, n);
    let mut delta = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, n);
    let thresh = mu / rho;
    let mut primal = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut history = Vec::new();
    let mut changes = Vec::new();
    let mut converged = false;
    let mut iteration = 0;

    while iteration < cfg.max_iter {
        iteration += 1;
        rhs.copy_from(&a);
        rhs *= rho;
        rhs += &delta;
        z.copy_from(&base);
        z.gemm(1.0, &lhs_inv, &rhs, 1.0);

        let mut next = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    next[(i, j)] = shrink(z[(i, j)] - delta[(i, j)] / rho, thresh);
                }
            }
        }
        change = frob_sq_diff(&next, &a);
        a = next;

        let gap = &a - &z;
        primal = frob_sq(&gap);
        delta += &gap * rho;

        if !(primal.is_finite() && change.is_finite()) {
            return Err(TmdaError::Divergence {
                iteration,
                reason: "non-finite ADMM residual".into(),
            });
        }
        history.push(primal);
        changes.push(change);
        if primal <= cfg.epsilon && change <= cfg.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!(
            "ADMM stopped at max_iter={} (primal {primal:.3e}, change {change:.3e})",
            cfg.max_iter
        );
    }

    let affinity = AffinityMatrix::new(a.clone())?;
    Ok((
        affinity,
        AdmmState {
            a,
            z,
            delta,
            iteration,
            primal_residual: primal,
            change_residual: change,
            converged,
            mu,
            primal_history: history,
            change_history: changes,
        },
    ))
}

fn normalize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn large_mu_shrinks_everything() {
        let x = random(3, 6, 1);
        let mut max_corr = 0.0f64;
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    max_corr = max_corr.max(x.column(i).dot(&x.column(j)).abs());
                }
            }
        }
        let cfg = AdmmConfig {
            mu: Some(max_corr * 1.5),
            alpha: 0.0,
            ..Default::default()
        };
        let zero_w = DMatrix::zeros(6, 1);
        let basis = DMatrix::identity(6, 6);
        let (a, state) = admm_affinity(&x, &basis, &zero_w, &cfg).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.0));
        assert!(state.converged);
    }

    #[test]
    fn diagonal_zero_and_converged_residual() {
        let x = random(5, 12, 2);
        let cfg = AdmmConfig {
            mu: Some(0.05),
            max_iter: 2000,
            ..Default::default()
        };
        let basis = DMatrix::identity(12, 12);
        let w = random(12, 2, 3);
        let (a, state) = admm_affinity(&x, &basis, &w, &cfg).unwrap();
        assert!((0..12).all(|i| a.values()[(i, i)] == 0.0));
        assert!(state.converged);
        assert!(state.primal_residual <= cfg.epsilon);
        // The primal residual alone can rise when the support changes; the
        // combined residual rho |dA|^2 + |dDelta|^2 / rho cannot.
        let rho = cfg.rho;
        let combined: Vec<f64> = state
            .primal_history
            .iter()
            .zip(&state.change_history)
            .map(|(p, c)| rho * c + rho * p)
            .collect();
        let tail = &combined[combined.len() - 5..];
        for win in tail.windows(2) {
            assert!(win[1] <= win[0] + 1e-10, "{tail:?}");
        }
        for win in combined[1..].windows(2) {
            assert!(win[1] <= win[0] * (1.0 + 1e-9) + 1e-14, "{combined:?}");
        }
    }

    #[test]
    fn shape_errors() {
        let x = random(2, 4, 0);
        let cfg = AdmmConfig::default();
        assert!(admm_affinity(&x, &DMatrix::zeros(4, 3), &DMatrix::zeros(4, 1), &cfg).is_err());
        assert!(admm_affinity(&x, &DMatrix::zeros(4, 4), &DMatrix::zeros(3, 1), &cfg).is_err());
        let bad = AdmmConfig {
            rho: 0.0,
            ..Default::default()
        };
        assert!(admm_affinity(&x, &DMatrix::zeros(4, 4), &DMatrix::zeros(4, 1), &bad).is_err());
    }
}
