//! Transfer learning by aligning distributions on shared low-dimensional manifolds.
//!
//! The pipeline discovers manifolds shared by a source and a target domain
//! through sparse self-representation (solved with ADMM) followed by a
//! normalized-cut spectral clustering, then learns a kernelized projection
//! that minimizes the average per-manifold maximum mean discrepancy while
//! preserving the self-representation structure. The two steps alternate
//! until both the affinity and the projection settle.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`kernels`] | kernel specs, Gram matrices, median bandwidth |
//! | [`discrepancy`] | empirical MMD / per-manifold MMD and their trace-form coefficients |
//! | [`manifolds`] | ADMM sparse affinity, soft thresholding, normalized-cut clustering |
//! | [`solver`] | projection eigen-solve, alternating fit, transform |
//! | [`data`] | datasets, synthetic generator, text I/O, intrinsic dimension |
//! | [`eval`] | nearest-neighbour classification, RMSE, strategy selection |
//! | [`experiment`] | experiment tables, sweeps, ablations and their results files |

pub mod cli;
pub mod data;
pub mod discrepancy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernels;
pub(crate) mod linalg;
pub mod manifolds;
pub mod solver;

pub use data::Dataset;
pub use discrepancy::{DiscrepancyCoefficients, DomainSplit, ManifoldAssignment};
pub use error::{Result, TmdaError};
pub use kernels::{KernelMatrix, KernelSpec};
pub use manifolds::{AdmmConfig, AdmmState, AffinityMatrix};
pub use solver::{FitMode, Mapping, ProjectionWeights, TmdaConfig, TmdaModel};

/// Library version stamped into every results record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
