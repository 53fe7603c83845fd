use nalgebra::DMatrix;

use super::{kmeans, AffinityMatrix};
use crate::discrepancy::ManifoldAssignment;
use crate::error::{invalid, Result};
use crate::linalg::sym_eigen_ascending;

const ISOLATED_SELF_LOOP: f64 = 1e-12;
const KMEANS_RESTARTS: usize = 10;

/// Normalized-cut spectral clustering of an affinity into `n_clusters` groups.
///
/// The graph is `S = |A| + |A|^T`. Nodes with zero degree get a tiny self
/// loop so the normalized Laplacian stays defined. The eigenvectors of the
/// `n_clusters` smallest eigenvalues of `I - D^-1/2 S D^-1/2` are row
/// normalized and grouped by seeded k-means (k-means++, 10 restarts).
///
/// Labels are in `1..=n_clusters`, numbered by first appearance.
pub fn ncut_cluster(
    a: &AffinityMatrix,
    n_clusters: usize,
    seed: u64,
) -> Result<ManifoldAssignment> {
    let n = a.n();
    if n_clusters == 0 || n_clusters > n {
        return invalid(format!("cannot form {n_clusters} clusters from {n} points"));
    }
    if n_clusters == 1 {
        return Ok(ManifoldAssignment::single(n));
    }
    let av = a.values();
    let mut s = DMatrix::from_fn(n, n, |i, j| av[(i, j)].abs() + av[(j, i)].abs());
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let mut d: f64 = s.row(i).iter().sum();
        if d <= 0.0 {
            s[(i, i)] += ISOLATED_SELF_LOOP;
            d = ISOLATED_SELF_LOOP;
        }
        inv_sqrt_deg[i] = 1.0 / d.sqrt();
    }
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - inv_sqrt_deg[i] * s[(i, j)] * inv_sqrt_deg[j]
    });
    let (_, vecs) = sym_eigen_ascending(lap);
    let mut emb = vecs.columns(0, n_clusters).into_owned();
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let km = kmeans(&emb, n_clusters, seed, KMEANS_RESTARTS)?;
    canonical_labels(&km.labels, n_clusters)
}

/// Renumber zero-based cluster ids to 1-based ids in order of first use.
fn canonical_labels(raw: &[usize], k: usize) -> Result<ManifoldAssignment> {
    let mut map = vec![0usize; k];
    let mut next = 1;
    let labels = raw
        .iter()
        .map(|&c| {
            if map[c] == 0 {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect();
    ManifoldAssignment::new(labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_affinity(sizes: &[usize]) -> AffinityMatrix {
        let n: usize = sizes.iter().sum();
        let mut m = DMatrix::zeros(n, n);
        let mut start = 0;
        for (b, &len) in sizes.iter().enumerate() {
            for i in start..start + len {
                for j in start..start + len {
                    if i != j {
                        m[(i, j)] = 0.5 + 0.1 * b as f64 + 0.01 * ((i * 7 + j * 3) % 5) as f64;
                    }
                }
            }
            start += len;
        }
        AffinityMatrix::new(m).unwrap()
    }

    #[test]
    fn recovers_disconnected_blocks() {
        let a = block_affinity(&[4, 5]);
        let labels = ncut_cluster(&a, 2, 3).unwrap();
        assert_eq!(labels.labels(), &[1, 1, 1, 1, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn single_cluster() {
        let a = block_affinity(&[3, 3]);
        assert!(ncut_cluster(&a, 1, 0)
            .unwrap()
            .labels()
            .iter()
            .all(|&l| l == 1));
    }

    #[test]
    fn too_many_clusters() {
        assert!(ncut_cluster(&block_affinity(&[2]), 3, 0).is_err());
    }

    #[test]
    fn zero_affinity_is_handled() {
        let labels = ncut_cluster(&AffinityMatrix::zeros(5), 2, 1).unwrap();
        assert_eq!(labels.len(), 5);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = block_affinity(&[3, 4, 5]);
        assert_eq!(
            ncut_cluster(&a, 3, 9).unwrap(),
            ncut_cluster(&a, 3, 9).unwrap()
        );
    }

    #[test]
    fn partition_follows_permutation() {
        let a = block_affinity(&[3, 4, 5]);
        let perm = [11, 2, 7, 0, 5, 9, 1, 10, 4, 8, 3, 6];
        let pv = a.values();
        let permuted =
            AffinityMatrix::new(DMatrix::from_fn(12, 12, |i, j| pv[(perm[i], perm[j])])).unwrap();
        let base = ncut_cluster(&a, 3, 4).unwrap();
        let moved = ncut_cluster(&permuted, 3, 4).unwrap();
        // same-cluster relation must agree under the permutation
        for i in 0..12 {
            for j in 0..12 {
                let same_moved = moved.labels()[i] == moved.labels()[j];
                let same_base = base.labels()[perm[i]] == base.labels()[perm[j]];
                assert_eq!(same_moved, same_base);
            }
        }
    }
}
