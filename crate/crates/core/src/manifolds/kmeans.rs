use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Zero-based cluster index per row.
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
}

fn row_sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..points.ncols() {
        let v = points[(i, d)] - centroids[(c, d)];
        s += v * v;
    }
    s
}

fn plus_plus_init(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| row_sq_dist(points, i, &centroids, 0))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, best) in closest.iter_mut().enumerate() {
            *best = best.min(row_sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for c in 0..centroids.nrows() {
            let d = row_sq_dist(points, i, centroids, c);
            if d < best {
                best = d;
                arg = c;
            }
        }
        *label = arg;
        inertia += best;
    }
    inertia
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>) -> KMeansResult {
    let n = points.nrows();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut inertia = assign(points, &centroids, &mut labels);
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = DMatrix::zeros(k, points.ncols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += points.row(i);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).copy_from(&row);
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        row_sq_dist(points, a, &centroids, labels[a])
                            .total_cmp(&row_sq_dist(points, b, &centroids, labels[b]))
                    })
                    .unwrap_or(0);
                centroids.row_mut(c).copy_from(&points.row(far));
            }
        }
        let before = labels.clone();
        inertia = assign(points, &centroids, &mut labels);
        if labels == before {
            break;
        }
    }
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Lloyd's k-means on the rows of `points` with k-means++ seeding.
///
/// Runs `restarts` seeded initializations and keeps the lowest inertia; the
/// earliest restart wins ties.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return invalid(format!("cannot form {k} clusters from {n} points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let pts = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1],
        );
        let r = kmeans(&pts, 2, 0, 10).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[1], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[4]);
        assert_ne!(r.labels[0], r.labels[3]);
    }

    #[test]
    fn rejects_too_many_clusters() {
        assert!(kmeans(&DMatrix::zeros(2, 1), 3, 0, 1).is_err());
    }
}
