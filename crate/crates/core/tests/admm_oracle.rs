mod common;

use common::{lasso_column, rng, uniform};
use nalgebra::DMatrix;
use tmda::manifolds::{admm_affinity, AdmmConfig};

fn max_offdiag_corr(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let mut m = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                m = m.max(g[(i, j)].abs());
            }
        }
    }
    m
}

#[test]
fn columns_match_coordinate_descent() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let x = uniform(&mut r, 3, 6);
        let mu = 0.1 * max_offdiag_corr(&x) * (1.0 + seed as f64 / 10.0);
        let cfg = AdmmConfig {
            mu: Some(mu),
            alpha: 0.0,
            max_iter: 20_000,
            epsilon: 1e-20,
            ..Default::default()
        };
        let (a, _) = admm_affinity(&x, &DMatrix::zeros(1, 6), &DMatrix::zeros(1, 1), &cfg).unwrap();
        let mut oracle = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for (j, v) in lasso_column(&x, i, mu).into_iter().enumerate() {
                oracle[(j, i)] = v;
            }
        }
        let err = (a.values() - &oracle).norm();
        assert!(err <= 1e-4, "seed {seed}: {err}");
        assert!((0..6).all(|i| a.values()[(i, i)] == 0.0));
    }
}

#[test]
fn threshold_above_every_correlation_gives_zero() {
    let mut r = rng(99);
    let x = uniform(&mut r, 3, 6);
    let cfg = AdmmConfig {
        mu: Some(max_offdiag_corr(&x) * 1.01),
        alpha: 0.0,
        max_iter: 5_000,
        ..Default::default()
    };
    let (a, _) = admm_affinity(&x, &DMatrix::zeros(1, 6), &DMatrix::zeros(1, 1), &cfg).unwrap();
    assert!(a.values().iter().all(|&v| v == 0.0));
}

#[test]
fn coupling_term_changes_the_solution() {
    let mut r = rng(5);
    let x = uniform(&mut r, 3, 8);
    let basis = DMatrix::identity(8, 8);
    let w = uniform(&mut r, 8, 2) * 3.0;
    let base = AdmmConfig {
        mu: Some(0.01),
        max_iter: 2_000,
        ..Default::default()
    };
    let (plain, _) = admm_affinity(
        &x,
        &basis,
        &w,
        &AdmmConfig {
            alpha: 0.0,
            ..base.clone()
        },
    )
    .unwrap();
    let (coupled, _) = admm_affinity(&x, &basis, &w, &AdmmConfig { alpha: 1.0, ..base }).unwrap();
    assert!((plain.values() - coupled.values()).norm() > 1e-3);
    let (zero_w, _) = admm_affinity(
        &x,
        &basis,
        &DMatrix::zeros(8, 2),
        &AdmmConfig {
            mu: Some(0.01),
            alpha: 1.0,
            max_iter: 2_000,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(zero_w.values(), plain.values());
}
