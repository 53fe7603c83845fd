//! Nearest-neighbour classification, label metrics and the cross-validated
//! choice between the two linear mappings.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::kernels::sq_dist;
use crate::solver::{fit, transform, Mapping, TmdaConfig};

pub const N_FOLDS: usize = 5;

/// 1-NN under Euclidean distance; ties go to the lowest training index.
pub fn nn_classify(train: &DMatrix<f64>, labels: &[i64], test: &DMatrix<f64>) -> Result<Vec<i64>> {
    if train.ncols() == 0 {
        return invalid("nearest neighbour needs a non-empty training set");
    }
    if labels.len() != train.ncols() {
        return invalid(format!(
            "{} labels for {} training points",
            labels.len(),
            train.ncols()
        ));
    }
    if train.nrows() != test.nrows() {
        return invalid(format!(
            "train dimension {} differs from test dimension {}",
            train.nrows(),
            test.nrows()
        ));
    }
    Ok(test
        .column_iter()
        .map(|q| {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (j, t) in train.column_iter().enumerate() {
                let d = sq_dist(q.as_slice(), t.as_slice());
                if d < best {
                    best = d;
                    arg = j;
                }
            }
            labels[arg]
        })
        .collect())
}

fn check_lengths(pred: &[i64], truth: &[i64]) -> Result<()> {
    if pred.len() != truth.len() {
        return invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        ));
    }
    if pred.is_empty() {
        return invalid("no labels to score");
    }
    Ok(())
}

/// Root mean squared difference of integer-coded labels.
pub fn rmse(pred: &[i64], truth: &[i64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sse: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = (p - t) as f64;
            d * d
        })
        .sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn accuracy(pred: &[i64], truth: &[i64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub accuracy: f64,
    /// Accuracy restricted to each true label.
    pub per_class_accuracy: BTreeMap<i64, f64>,
    pub n_evaluated: usize,
}

impl EvalReport {
    pub fn new(pred: &[i64], truth: &[i64]) -> Result<Self> {
        let rmse = rmse(pred, truth)?;
        let accuracy = accuracy(pred, truth)?;
        let mut counts: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
        for (p, t) in pred.iter().zip(truth) {
            let e = counts.entry(*t).or_default();
            e.1 += 1;
            if p == t {
                e.0 += 1;
            }
        }
        let per_class_accuracy = counts
            .into_iter()
            .map(|(k, (hit, tot))| (k, hit as f64 / tot as f64))
            .collect();
        Ok(Self {
            rmse,
            accuracy,
            per_class_accuracy,
            n_evaluated: pred.len(),
        })
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "rmse={}\naccuracy={}\nn_evaluated={}\n",
            self.rmse, self.accuracy, self.n_evaluated
        );
        for (k, v) in &self.per_class_accuracy {
            out.push_str(&format!("class_{k}_accuracy={v}\n"));
        }
        out
    }
}

/// The two ways of getting a linear mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearStrategy {
    /// Project the raw features.
    RawLinear,
    /// Project through a linear Gram matrix.
    LinearKernel,
}

impl LinearStrategy {
    pub fn mapping(self) -> Mapping {
        match self {
            LinearStrategy::RawLinear => Mapping::Raw,
            LinearStrategy::LinearKernel => Mapping::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub choice: LinearStrategy,
    pub raw_fold_errors: Vec<f64>,
    pub kernel_fold_errors: Vec<f64>,
    /// False when some class was too small for stratification.
    pub stratified: bool,
}

impl StrategyReport {
    pub fn raw_error(&self) -> f64 {
        mean(&self.raw_fold_errors)
    }

    pub fn kernel_error(&self) -> f64 {
        mean(&self.kernel_fold_errors)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seeded fold index per point; stratified by label when every class has
/// at least `N_FOLDS` members.
pub fn fold_assignment(labels: &[i64], seed: u64) -> (Vec<usize>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let stratified = by_class.values().all(|v| v.len() >= N_FOLDS);
    let mut folds = vec![0; labels.len()];
    if stratified {
        let mut next = 0;
        for members in by_class.values_mut() {
            members.shuffle(&mut rng);
            for &i in members.iter() {
                folds[i] = next % N_FOLDS;
                next += 1;
            }
        }
    } else {
        log::warn!("a class has fewer than {N_FOLDS} members; using unstratified folds");
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        for (pos, &i) in all.iter().enumerate() {
            folds[i] = pos % N_FOLDS;
        }
    }
    (folds, stratified)
}

/// Pick between the raw and linear-kernel mappings by 5-fold source error.
///
/// Each fold fits on the other four source folds plus the full target, then
/// classifies the held-out source fold by 1-NN in the learned space. The
/// lower mean error wins; ties go to the raw mapping.
pub fn select_linear_strategy(
    source: &Dataset,
    target: &Dataset,
    cfg: &TmdaConfig,
) -> Result<StrategyReport> {
    let labels = source.require_labels("strategy selection")?;
    if source.len() < N_FOLDS {
        return invalid(format!(
            "strategy selection needs at least {N_FOLDS} source points"
        ));
    }
    let (folds, stratified) = fold_assignment(labels, cfg.seed);
    let mut errors = [Vec::new(), Vec::new()];
    for (slot, strategy) in [LinearStrategy::RawLinear, LinearStrategy::LinearKernel]
        .into_iter()
        .enumerate()
    {
        let run_cfg = TmdaConfig {
            mapping: strategy.mapping(),
            ..cfg.clone()
        };
        for f in 0..N_FOLDS {
            let train_idx: Vec<usize> = (0..source.len()).filter(|&i| folds[i] != f).collect();
            let held_idx: Vec<usize> = (0..source.len()).filter(|&i| folds[i] == f).collect();
            if held_idx.is_empty() {
                continue;
            }
            let train = source.select(&train_idx);
            let held = source.select(&held_idx);
            let model = fit(&train, target, &run_cfg)?;
            let emb_train = transform(&model, &train.x)?;
            let emb_held = transform(&model, &held.x)?;
            let pred = nn_classify(&emb_train, train.require_labels("fold")?, &emb_held)?;
            let acc = accuracy(&pred, held.require_labels("fold")?)?;
            errors[slot].push(1.0 - acc);
        }
    }
    let [raw, kernel] = errors;
    let choice = if mean(&kernel) < mean(&raw) {
        LinearStrategy::LinearKernel
    } else {
        LinearStrategy::RawLinear
    };
    Ok(StrategyReport {
        choice,
        raw_fold_errors: raw,
        kernel_fold_errors: kernel,
        stratified,
    })
}
