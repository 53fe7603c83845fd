mod common;

use common::{b_orthonormalize, rng, uniform};
use nalgebra::DMatrix;
use rand::Rng;
use tmda::discrepancy::{build_coefficients, DomainSplit, ManifoldAssignment};
use tmda::kernels::{kernel_matrix, KernelSpec};
use tmda::solver::{solve_projection, ProjectionPencil};
use tmda::AffinityMatrix;

#[test]
fn raw_basis_pencil_and_constraint() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let (d, n) = (6, 14);
        let x = uniform(&mut r, d, n);
        let a = AffinityMatrix::new(uniform(&mut r, n, n) * 0.1).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| 1 + i % 3).collect();
        let coeffs = build_coefficients(
            DomainSplit::new(7, 7).unwrap(),
            &ManifoldAssignment::new(labels, 3).unwrap(),
        )
        .unwrap();
        let p = solve_projection(&x, &a, &coeffs, 0.01, 100.0, 3).unwrap();
        assert_eq!(p.rank, d);
        let g = p.w.transpose() * &x * x.transpose() * &p.w;
        assert!((g - DMatrix::identity(3, 3)).amax() <= 1e-10);
        let pencil = ProjectionPencil::build(&x, &a, &coeffs.averaged(), 0.01, 100.0).unwrap();
        let resid = &pencil.c * &p.w - &pencil.b * &p.w * DMatrix::from_diagonal(&p.eigenvalues);
        assert!(resid.amax() <= 1e-9 * pencil.c.amax());
        // eigenvalues ascending, signs fixed
        assert!(p.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        for col in p.w.column_iter() {
            let top = col
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(top > 0.0);
        }
    }
}

#[test]
fn kernel_basis_beats_feasible_perturbations() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let n = 16;
        let x = uniform(&mut r, 4, n);
        let k = kernel_matrix(&x, KernelSpec::Rbf { gamma: 0.3 })
            .unwrap()
            .values;
        let a = AffinityMatrix::new(uniform(&mut r, n, n) * 0.2).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(1..=2)).collect();
        let coeffs = build_coefficients(
            DomainSplit::new(8, 8).unwrap(),
            &ManifoldAssignment::new(labels, 2).unwrap(),
        )
        .unwrap();
        let p = solve_projection(&k, &a, &coeffs, 0.01, 100.0, 2).unwrap();
        let pencil = ProjectionPencil::build(&k, &a, &coeffs.averaged(), 0.01, 100.0).unwrap();
        let best = pencil.objective(&p.w);
        for _ in 0..20 {
            let near = b_orthonormalize(&(&p.w + uniform(&mut r, n, 2) * 0.05), &pencil.b);
            assert!(pencil.objective(&near) >= best - 1e-8);
            let far = b_orthonormalize(&uniform(&mut r, n, 2), &pencil.b);
            assert!(pencil.objective(&far) >= best - 1e-8);
        }
    }
}
