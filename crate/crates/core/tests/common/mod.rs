#![allow(dead_code)]

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

/// Best accuracy over all relabelings of `pred` (brute force, fine for
/// up to ~7 clusters).
pub fn matched_accuracy(pred: &[usize], truth: &[i64], n_clusters: usize) -> f64 {
    let mut classes: Vec<i64> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut best = 0;
    let slots = n_clusters.max(classes.len());
    for perm in (0..slots).permutations(n_clusters) {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(&p, &t)| classes.get(perm[p - 1]) == Some(&t))
            .count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// Coordinate descent for `min 1/2 |x_i - X a|^2 + mu |a|_1` with `a_i = 0`.
pub fn lasso_column(x: &DMatrix<f64>, i: usize, mu: f64) -> Vec<f64> {
    let n = x.ncols();
    let mut a = vec![0.0; n];
    let mut resid = x.column(i).into_owned();
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = x.column(j);
            let nj = xj.norm_squared();
            let rho = xj.dot(&resid) + nj * a[j];
            let next = if rho > mu {
                (rho - mu) / nj
            } else if rho < -mu {
                (rho + mu) / nj
            } else {
                0.0
            };
            let d = next - a[j];
            if d != 0.0 {
                resid -= xj * d;
                a[j] = next;
                moved = moved.max(d.abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    a
}

/// `W (W^T B W)^{-1/2}`-style re-orthonormalization via Cholesky.
pub fn b_orthonormalize(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let g = w.transpose() * b * w;
    let l = g.cholesky().expect("random W has full column rank").l();
    let linv = l.try_inverse().unwrap();
    w * linv.transpose()
}
