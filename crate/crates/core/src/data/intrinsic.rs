use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::kernels::sq_dist;

const ZERO_DISTANCE: f64 = 1e-12;

/// Levina-Bickel maximum-likelihood intrinsic dimension over the columns of `x`.
///
/// For each point the inverse local estimate is
/// `(1/(k-1)) sum_{j<k} log(T_k / T_j)` with `T_j` the distance to its `j`-th
/// nearest neighbour. These are averaged over points and the mean inverted.
/// Zero distances (duplicates) are replaced by `j * 1e-12` so the logs stay
/// finite.
pub fn estimate_intrinsic_dim(x: &DMatrix<f64>, k_neighbors: usize) -> Result<f64> {
    let n = x.ncols();
    if k_neighbors < 2 {
        return invalid(format!("need at least 2 neighbours, got {k_neighbors}"));
    }
    if n <= k_neighbors {
        return invalid(format!(
            "{n} points is not more than {k_neighbors} neighbours"
        ));
    }
    let mut dist = vec![0.0; n - 1];
    let mut inv_sum = 0.0;
    for i in 0..n {
        let xi = x.column(i);
        let mut m = 0;
        for j in 0..n {
            if j != i {
                dist[m] = sq_dist(xi.as_slice(), x.column(j).as_slice()).sqrt();
                m += 1;
            }
        }
        dist.select_nth_unstable_by(k_neighbors - 1, f64::total_cmp);
        let near = &mut dist[..k_neighbors];
        near.sort_by(f64::total_cmp);
        for (j, d) in near.iter_mut().enumerate() {
            if *d <= 0.0 {
                *d = ZERO_DISTANCE * (j + 1) as f64;
            }
        }
        let tk = near[k_neighbors - 1];
        let s: f64 = near[..k_neighbors - 1].iter().map(|&t| (tk / t).ln()).sum();
        inv_sum += s / (k_neighbors - 1) as f64;
    }
    let mean_inv = inv_sum / n as f64;
    if mean_inv <= 0.0 {
        // every neighbourhood is equidistant; no scale information
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / mean_inv)
}

/// Round an estimate to a usable subspace dimension in `1..=max_dim`.
pub fn subspace_dim_from_estimate(estimate: f64, max_dim: usize) -> usize {
    if !estimate.is_finite() {
        return max_dim.max(1);
    }
    (estimate.round().max(1.0) as usize).min(max_dim.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn embed(points: &[(f64, f64)], d: usize) -> DMatrix<f64> {
        // fixed orthonormal pair in R^d: e_0 + e_1 and e_0 - e_1, scaled
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DMatrix::from_fn(d, points.len(), |r, c| {
            let (a, b) = points[c];
            match r {
                0 => s * (a + b),
                1 => s * (a - b),
                _ => 0.0,
            }
        })
    }

    #[test]
    fn line_segment() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..200).map(|_| (rng.gen::<f64>(), 0.0)).collect();
        let est = estimate_intrinsic_dim(&embed(&pts, 10), 10).unwrap();
        assert!((0.8..=1.4).contains(&est), "{est}");
    }

    #[test]
    fn disc() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<_> = (0..200)
            .map(|_| {
                let r = rng.gen::<f64>().sqrt();
                let t = rng.gen::<f64>() * std::f64::consts::TAU;
                (r * t.cos(), r * t.sin())
            })
            .collect();
        let est = estimate_intrinsic_dim(&embed(&pts, 10), 10).unwrap();
        assert!((1.6..=2.6).contains(&est), "{est}");
    }

    #[test]
    fn duplicates_do_not_nan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let base = DMatrix::from_fn(3, 30, |_, _| rng.gen::<f64>());
        let x = crate::data::hstack(&base, &base).unwrap();
        let est = estimate_intrinsic_dim(&x, 5).unwrap();
        assert!(!est.is_nan());
        let same = DMatrix::from_element(2, 8, 1.0);
        assert!(!estimate_intrinsic_dim(&same, 3).unwrap().is_nan());
    }

    #[test]
    fn too_few_points() {
        assert!(estimate_intrinsic_dim(&DMatrix::zeros(2, 5), 5).is_err());
        assert!(estimate_intrinsic_dim(&DMatrix::zeros(2, 5), 1).is_err());
    }

    #[test]
    fn rounding() {
        assert_eq!(subspace_dim_from_estimate(2.4, 10), 2);
        assert_eq!(subspace_dim_from_estimate(0.2, 10), 1);
        assert_eq!(subspace_dim_from_estimate(31.0, 10), 10);
        assert_eq!(subspace_dim_from_estimate(f64::INFINITY, 4), 4);
    }
}
