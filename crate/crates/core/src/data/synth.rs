use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};

/// Union-of-subspaces transfer benchmark.
///
/// Manifold `i` is spanned by `U_i = T^(i-1) U_1` where `U_1` is a random
/// orthonormal `ambient_dim x manifold_dim` basis and `T` one random rotation.
/// Each domain draws `points_per_manifold` coefficient vectors per manifold
/// with its own mean, so both domains share the manifolds but not the
/// distribution on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_manifolds: usize,
    pub ambient_dim: usize,
    pub manifold_dim: usize,
    pub points_per_manifold: usize,
    pub source_mean: f64,
    pub target_mean: f64,
    /// Standard deviation of the coefficient draws.
    pub sampling_std: f64,
    /// Fraction of points per domain that get ambient Gaussian noise.
    pub corrupt_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_manifolds: 5,
            ambient_dim: 100,
            manifold_dim: 10,
            points_per_manifold: 40,
            source_mean: 0.05,
            target_mean: -0.05,
            sampling_std: 0.1,
            corrupt_fraction: 0.05,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_manifolds == 0 || self.points_per_manifold == 0 || self.manifold_dim == 0 {
            return invalid("manifold count, size and dimension must be positive");
        }
        if self.manifold_dim >= self.ambient_dim {
            return invalid(format!(
                "manifold_dim {} must be below ambient_dim {}",
                self.manifold_dim, self.ambient_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return invalid(format!(
                "corrupt_fraction {} outside [0, 1]",
                self.corrupt_fraction
            ));
        }
        for (name, v) in [
            ("sampling_std", self.sampling_std),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.source_mean.is_finite() && self.target_mean.is_finite()) {
            return invalid("domain means must be finite");
        }
        Ok(())
    }
}

/// Labeled source, unlabeled target and the held-out target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTask {
    pub source: Dataset,
    pub target: Dataset,
    pub target_labels: Vec<i64>,
}

/// Generator internals, exposed for inspection.
#[derive(Debug, Clone)]
pub struct SynthParts {
    pub task: TransferTask,
    pub bases: Vec<DMatrix<f64>>,
    pub rotation: DMatrix<f64>,
}

fn gaussian(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if std == 0.0 {
        return DMatrix::from_element(rows, cols, mean);
    }
    let dist = Normal::new(mean, std).expect("validated std");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// Orthonormal factor of a QR with `R` made to have a positive diagonal.
fn orthonormal(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut t = orthonormal(gaussian(d, d, 0.0, 1.0, rng));
    if t.determinant() < 0.0 {
        t.column_mut(0).neg_mut();
    }
    t
}

/// Draw one transfer task.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<TransferTask> {
    Ok(generate_synthetic_parts(cfg)?.task)
}

/// Draw one transfer task, returning the bases and rotation as well.
pub fn generate_synthetic_parts(cfg: &SynthConfig) -> Result<SynthParts> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.ambient_dim;
    let per = cfg.points_per_manifold;
    let u1 = orthonormal(gaussian(d, cfg.manifold_dim, 0.0, 1.0, &mut rng));
    let rotation = random_rotation(d, &mut rng);

    let mut bases = Vec::with_capacity(cfg.n_manifolds);
    bases.push(u1);
    for i in 1..cfg.n_manifolds {
        let next = &rotation * &bases[i - 1];
        bases.push(next);
    }

    let total = cfg.n_manifolds * per;
    let mut xs = DMatrix::zeros(d, total);
    let mut xt = DMatrix::zeros(d, total);
    let mut labels = Vec::with_capacity(total);
    for (i, u) in bases.iter().enumerate() {
        let qs = gaussian(
            cfg.manifold_dim,
            per,
            cfg.source_mean,
            cfg.sampling_std,
            &mut rng,
        );
        let qt = gaussian(
            cfg.manifold_dim,
            per,
            cfg.target_mean,
            cfg.sampling_std,
            &mut rng,
        );
        xs.columns_mut(i * per, per).copy_from(&(u * qs));
        xt.columns_mut(i * per, per).copy_from(&(u * qt));
        labels.extend(std::iter::repeat_n((i + 1) as i64, per));
    }

    let n_corrupt = (cfg.corrupt_fraction * total as f64).round() as usize;
    if n_corrupt > 0 && cfg.noise_std > 0.0 {
        for x in [&mut xs, &mut xt] {
            let mut picked = sample(&mut rng, total, n_corrupt).into_vec();
            picked.sort_unstable();
            for c in picked {
                let noise = gaussian(d, 1, 0.0, cfg.noise_std, &mut rng);
                let mut col = x.column_mut(c);
                col += noise.column(0);
            }
        }
    }

    let source = Dataset::with_labels(xs, labels.clone())?;
    let target = Dataset::new(xt)?;
    Ok(SynthParts {
        task: TransferTask {
            source,
            target,
            target_labels: labels,
        },
        bases,
        rotation,
    })
}
