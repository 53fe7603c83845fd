//! Batch experiments: comparison tables, manifold-count and hyper-parameter
//! sweeps, and the ablation, with a line-oriented results format.
//!
//! Every run is one `(cell, repetition)` pair. Repetition `r` uses seed
//! `seed + r` both to draw the synthetic task and to seed the fit, so a
//! config file plus a seed fully determines the output. Runs may execute on
//! a rayon pool; records are written in job order regardless.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, read_labels, read_matrix, Dataset, SynthConfig, TransferTask,
};
use crate::error::{invalid, Result, TmdaError};
use crate::eval::{nn_classify, select_linear_strategy, EvalReport};
use crate::solver::{fit, FitMode, Mapping, TmdaConfig};

/// A comparison method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// 1-NN on the raw features.
    NoTransfer,
    /// Global discrepancy only.
    Mmd,
    /// Per-manifold discrepancy, jointly optimized.
    M3d,
    /// Per-manifold discrepancy with manifolds found once, uncoupled.
    Decoupled,
}

impl Method {
    fn mode(self) -> Option<FitMode> {
        match self {
            Method::NoTransfer => None,
            Method::Mmd => Some(FitMode::GlobalMmd),
            Method::M3d => Some(FitMode::Full),
            Method::Decoupled => Some(FitMode::Decoupled),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Method::NoTransfer => "nt",
            Method::Mmd => "mmd",
            Method::M3d => "m3d",
            Method::Decoupled => "v2",
        }
    }
}

/// Mapping used by a cell. `Auto` picks raw or linear-kernel by
/// cross-validated source error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellMapping {
    Raw,
    Linear,
    Rbf,
    Auto,
}

impl CellMapping {
    fn tag(self) -> &'static str {
        match self {
            CellMapping::Raw => "raw",
            CellMapping::Linear => "linear",
            CellMapping::Rbf => "rbf",
            CellMapping::Auto => "auto",
        }
    }
}

impl From<Mapping> for CellMapping {
    fn from(m: Mapping) -> Self {
        match m {
            Mapping::Raw => CellMapping::Raw,
            Mapping::Linear => CellMapping::Linear,
            Mapping::Rbf => CellMapping::Rbf,
        }
    }
}

/// One column of a comparison table, written `nt`, `mmd_rbf`, `m3d_raw`,
/// `v2_linear`, `m3d_auto` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cell {
    pub method: Method,
    /// `None` exactly for [`Method::NoTransfer`].
    pub mapping: Option<CellMapping>,
}

impl Cell {
    pub const NO_TRANSFER: Cell = Cell {
        method: Method::NoTransfer,
        mapping: None,
    };

    pub fn new(method: Method, mapping: impl Into<CellMapping>) -> Self {
        if method == Method::NoTransfer {
            return Self::NO_TRANSFER;
        }
        Self {
            method,
            mapping: Some(mapping.into()),
        }
    }

    /// The seven columns of the standard comparison table.
    pub fn table() -> Vec<Cell> {
        let mut cells = vec![Self::NO_TRANSFER];
        for method in [Method::Mmd, Method::M3d] {
            for mapping in [Mapping::Raw, Mapping::Linear, Mapping::Rbf] {
                cells.push(Cell::new(method, mapping));
            }
        }
        cells
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mapping {
            None => f.write_str(self.method.tag()),
            Some(m) => write!(f, "{}_{}", self.method.tag(), m.tag()),
        }
    }
}

impl FromStr for Cell {
    type Err = TmdaError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "nt" {
            return Ok(Self::NO_TRANSFER);
        }
        let bad = || TmdaError::InvalidInput(format!("unknown cell {s:?}"));
        let (m, k) = s.split_once('_').ok_or_else(bad)?;
        let method = match m {
            "mmd" | "v1" => Method::Mmd,
            "m3d" => Method::M3d,
            "v2" => Method::Decoupled,
            _ => return Err(bad()),
        };
        let mapping = match k {
            "raw" => CellMapping::Raw,
            "linear" => CellMapping::Linear,
            "rbf" => CellMapping::Rbf,
            "auto" => CellMapping::Auto,
            _ => return Err(bad()),
        };
        Ok(Self {
            method,
            mapping: Some(mapping),
        })
    }
}

impl TryFrom<String> for Cell {
    type Error = TmdaError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Cell> for String {
    fn from(c: Cell) -> String {
        c.to_string()
    }
}

/// Feature and label files for a fixed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTask {
    pub source: PathBuf,
    pub source_labels: PathBuf,
    pub target: PathBuf,
    /// Used for scoring only.
    pub target_labels: PathBuf,
}

/// Where the transfer tasks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    /// A fresh draw per repetition; the generator seed is replaced by the
    /// repetition seed.
    Synthetic(SynthConfig),
    /// The same data for every repetition; only the fit seed changes.
    Files(FileTask),
}

impl Default for TaskSource {
    fn default() -> Self {
        TaskSource::Synthetic(SynthConfig::default())
    }
}

impl TaskSource {
    pub fn load(&self, seed: u64) -> Result<TransferTask> {
        match self {
            TaskSource::Synthetic(cfg) => generate_synthetic(&SynthConfig {
                seed,
                ..cfg.clone()
            }),
            TaskSource::Files(f) => {
                let source = Dataset::with_labels(
                    read_matrix(&f.source)?.x,
                    read_labels(&f.source_labels)?,
                )?;
                let target = read_matrix(&f.target)?;
                let target_labels = read_labels(&f.target_labels)?;
                if target_labels.len() != target.len() {
                    return invalid(format!(
                        "{} target labels for {} target points",
                        target_labels.len(),
                        target.len()
                    ));
                }
                Ok(TransferTask {
                    source,
                    target,
                    target_labels,
                })
            }
        }
    }
}

/// Value lists for the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
    pub beta_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: (2..=8).collect(),
            alpha_values: vec![0.001, 0.01, 0.1, 1.0],
            beta_values: vec![1.0, 10.0, 100.0, 1000.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub repetitions: usize,
    /// Seed of the first repetition.
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Cells of [`run_experiment`]. The sweeps and the ablation choose their
    /// own cells from `tmda.mapping`.
    pub comparison: Vec<Cell>,
    pub task: TaskSource,
    /// Fit settings shared by every cell. `mode`, `seed` and, per cell,
    /// `mapping` are overridden.
    pub tmda: TmdaConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repetitions: 10,
            seed: 0,
            output: None,
            comparison: Cell::table(),
            task: TaskSource::default(),
            tmda: TmdaConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1");
        }
        if let TaskSource::Synthetic(s) = &self.task {
            s.validate()?;
        }
        self.tmda.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TmdaError::Parse {
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex prefix of the SHA-256 of the canonical TOML form, ignoring
    /// `output`.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Which driver produced a results file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Experiment,
    SweepManifolds,
    SweepSensitivity,
    Ablation,
}

impl Operation {
    fn tag(self) -> &'static str {
        match self {
            Operation::Experiment => "experiment",
            Operation::SweepManifolds => "sweep_n",
            Operation::SweepSensitivity => "sweep_ab",
            Operation::Ablation => "ablation",
        }
    }
}

impl FromStr for Operation {
    type Err = TmdaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "experiment" => Operation::Experiment,
            "sweep_n" => Operation::SweepManifolds,
            "sweep_ab" => Operation::SweepSensitivity,
            "ablation" => Operation::Ablation,
            _ => return invalid(format!("unknown operation {s:?}")),
        })
    }
}

/// Swept values attached to a run; empty for plain comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Params {
    pub n_manifolds: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl Params {
    fn same(&self, other: &Params) -> bool {
        self.n_manifolds == other.n_manifolds
            && self.alpha.map(f64::to_bits) == other.alpha.map(f64::to_bits)
            && self.beta.map(f64::to_bits) == other.beta.map(f64::to_bits)
    }

    fn apply(&self, cfg: &mut TmdaConfig) {
        if let Some(n) = self.n_manifolds {
            cfg.n_manifolds = n;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(n) = self.n_manifolds {
            out.push(("n_manifolds", n.to_string()));
        }
        if let Some(a) = self.alpha {
            out.push(("alpha", a.to_string()));
        }
        if let Some(b) = self.beta {
            out.push(("beta", b.to_string()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub rmse: f64,
    pub accuracy: f64,
    /// Embedding dimension; the input dimension for no-transfer runs.
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(RunMetrics),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub params: Params,
    pub rep: usize,
    pub seed: u64,
    pub outcome: Outcome,
}

impl RunRecord {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        match &self.outcome {
            Outcome::Ok(m) => Some(m),
            Outcome::Failed(_) => None,
        }
    }
}

/// Mean and unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub var: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self { mean, var })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: Cell,
    pub params: Params,
    pub runs: usize,
    pub failed: usize,
    pub rmse: Option<Stats>,
    pub accuracy: Option<Stats>,
}

/// Everything a driver emits.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub operation: Operation,
    pub seed: u64,
    pub repetitions: usize,
    pub config_hash: String,
    pub version: String,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<SummaryRow>,
}

impl ResultsFile {
    /// True when every run produced metrics.
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.metrics().is_some())
    }

    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| r.metrics().is_none()).count()
    }

    pub fn summary(&self, cell: Cell, params: Params) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|s| s.cell == cell && s.params.same(&params))
    }

    /// Metrics of `cell` at `params` indexed by repetition.
    pub fn column(&self, cell: Cell, params: Params) -> Vec<Option<RunMetrics>> {
        let mut out = vec![None; self.repetitions];
        for r in &self.runs {
            if r.cell == cell && r.params.same(&params) && r.rep < out.len() {
                out[r.rep] = r.metrics().copied();
            }
        }
        out
    }

    fn stamp(&self) -> String {
        format!("config={} version={}", self.config_hash, self.version)
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "header operation={} seed={} repetitions={} {}",
            self.operation.tag(),
            self.seed,
            self.repetitions,
            self.stamp()
        );
        for r in &self.runs {
            let mut line = format!("run cell={}", r.cell);
            for (k, v) in r.params.fields() {
                let _ = write!(line, " {k}={v}");
            }
            let _ = write!(line, " rep={} seed={}", r.rep, r.seed);
            match &r.outcome {
                Outcome::Ok(m) => {
                    let _ = write!(
                        line,
                        " status=ok rmse={} accuracy={} k={} iterations={} converged={}",
                        m.rmse, m.accuracy, m.k, m.iterations, m.converged
                    );
                }
                Outcome::Failed(msg) => {
                    let _ = write!(line, " status=failed error={}", quote(msg));
                }
            }
            let _ = writeln!(out, "{line} {}", self.stamp());
        }
        for s in &self.summaries {
            let mut line = format!("summary cell={}", s.cell);
            for (k, v) in s.params.fields() {
                let _ = write!(line, " {k}={v}");
            }
            let _ = write!(line, " runs={} failed={}", s.runs, s.failed);
            for (name, stats) in [("rmse", s.rmse), ("accuracy", s.accuracy)] {
                if let Some(st) = stats {
                    let _ = write!(line, " {name}_mean={} {name}_var={}", st.mean, st.var);
                }
            }
            let _ = writeln!(out, "{line} seed={} {}", self.seed, self.stamp());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut runs = Vec::new();
        let mut summaries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TmdaError::Parse {
                line: line_no,
                message,
            };
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            let fields = Fields::parse(rest).map_err(&err)?;
            match kind {
                "header" => {
                    header = Some((
                        fields
                            .get("operation")
                            .map_err(&err)?
                            .parse()
                            .map_err(|e: TmdaError| err(e.to_string()))?,
                        fields.num::<u64>("seed").map_err(&err)?,
                        fields.num::<usize>("repetitions").map_err(&err)?,
                        fields.get("config").map_err(&err)?.to_string(),
                        fields.get("version").map_err(&err)?.to_string(),
                    ));
                }
                "run" => {
                    let outcome = match fields.get("status").map_err(&err)? {
                        "ok" => Outcome::Ok(RunMetrics {
                            rmse: fields.num("rmse").map_err(&err)?,
                            accuracy: fields.num("accuracy").map_err(&err)?,
                            k: fields.num("k").map_err(&err)?,
                            iterations: fields.num("iterations").map_err(&err)?,
                            converged: fields.num("converged").map_err(&err)?,
                        }),
                        "failed" => Outcome::Failed(fields.get("error").map_err(&err)?.to_string()),
                        other => return Err(err(format!("unknown status {other:?}"))),
                    };
                    runs.push(RunRecord {
                        cell: fields.cell().map_err(&err)?,
                        params: fields.params().map_err(&err)?,
                        rep: fields.num("rep").map_err(&err)?,
                        seed: fields.num("seed").map_err(&err)?,
                        outcome,
                    });
                }
                "summary" => {
                    let stats = |name: &str| -> std::result::Result<Option<Stats>, String> {
                        let mean = format!("{name}_mean");
                        if !fields.has(&mean) {
                            return Ok(None);
                        }
                        Ok(Some(Stats {
                            mean: fields.num(&mean)?,
                            var: fields.num(&format!("{name}_var"))?,
                        }))
                    };
                    summaries.push(SummaryRow {
                        cell: fields.cell().map_err(&err)?,
                        params: fields.params().map_err(&err)?,
                        runs: fields.num("runs").map_err(&err)?,
                        failed: fields.num("failed").map_err(&err)?,
                        rmse: stats("rmse").map_err(&err)?,
                        accuracy: stats("accuracy").map_err(&err)?,
                    });
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        let (operation, seed, repetitions, config_hash, version) =
            header.ok_or_else(|| TmdaError::Parse {
                line: 0,
                message: "missing header record".into(),
            })?;
        Ok(Self {
            operation,
            seed,
            repetitions,
            config_hash,
            version,
            runs,
            summaries,
        })
    }

    /// Comma-separated table: one row per repetition (and swept value), one
    /// column per cell, then a `mean` row per swept value. Failed runs show
    /// as `NA`.
    pub fn table(&self) -> String {
        let mut cells: Vec<Cell> = Vec::new();
        let mut groups: Vec<Params> = Vec::new();
        for r in &self.runs {
            if !cells.contains(&r.cell) {
                cells.push(r.cell);
            }
            if !groups.iter().any(|g| g.same(&r.params)) {
                groups.push(r.params);
            }
        }
        let keys: Vec<&str> = groups
            .first()
            .map(|g| g.fields().into_iter().map(|(k, _)| k).collect())
            .unwrap_or_default();
        let mut out = String::new();
        let mut head: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
        head.push("rep".into());
        head.extend(cells.iter().map(Cell::to_string));
        let _ = writeln!(out, "{}", head.join(","));
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        for g in &groups {
            let prefix: Vec<String> = g.fields().into_iter().map(|(_, v)| v).collect();
            let columns: Vec<_> = cells.iter().map(|&c| self.column(c, *g)).collect();
            for rep in 0..self.repetitions {
                let mut row = prefix.clone();
                row.push((rep + 1).to_string());
                row.extend(columns.iter().map(|col| fmt(col[rep].map(|m| m.rmse))));
                let _ = writeln!(out, "{}", row.join(","));
            }
            let mut row = prefix.clone();
            row.push("mean".into());
            row.extend(
                cells
                    .iter()
                    .map(|&c| fmt(self.summary(c, *g).and_then(|s| s.rmse).map(|s| s.mean))),
            );
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out.push('"');
    out
}

/// `key=value` pairs of one record. Values are bare words or double-quoted
/// strings with `\"`, `\\` and `\n` escapes.
struct Fields(BTreeMap<String, String>);

impl Fields {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut map = BTreeMap::new();
        let mut chars = s.chars().peekable();
        loop {
            while chars.peek() == Some(&' ') {
                chars.next();
            }
            if chars.peek().is_none() {
                break;
            }
            let mut key = String::new();
            for ch in chars.by_ref() {
                if ch == '=' {
                    break;
                }
                if ch == ' ' {
                    return Err(format!("field {key:?} has no value"));
                }
                key.push(ch);
            }
            let mut value = String::new();
            if chars.peek() == Some(&'"') {
                chars.next();
                let mut closed = false;
                while let Some(ch) = chars.next() {
                    match ch {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some('n') => value.push('\n'),
                            Some(c @ ('"' | '\\')) => value.push(c),
                            other => return Err(format!("bad escape {other:?}")),
                        },
                        c => value.push(c),
                    }
                }
                if !closed {
                    return Err(format!("unterminated string for {key:?}"));
                }
            } else {
                while let Some(&ch) = chars.peek() {
                    if ch == ' ' {
                        break;
                    }
                    value.push(ch);
                    chars.next();
                }
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(format!("duplicate field {key:?}"));
            }
        }
        Ok(Self(map))
    }

    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn get(&self, key: &str) -> std::result::Result<&str, String> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format!("missing field {key:?}"))
    }

    fn num<T: FromStr>(&self, key: &str) -> std::result::Result<T, String> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| format!("bad value {v:?} for {key:?}"))
    }

    fn opt<T: FromStr>(&self, key: &str) -> std::result::Result<Option<T>, String> {
        if self.has(key) {
            self.num(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn cell(&self) -> std::result::Result<Cell, String> {
        self.get("cell")?
            .parse()
            .map_err(|e: TmdaError| e.to_string())
    }

    fn params(&self) -> std::result::Result<Params, String> {
        Ok(Params {
            n_manifolds: self.opt("n_manifolds")?,
            alpha: self.opt("alpha")?,
            beta: self.opt("beta")?,
        })
    }
}

/// Score one cell on one task.
pub fn run_cell(task: &TransferTask, cell: Cell, cfg: &TmdaConfig) -> Result<RunMetrics> {
    let labels = task.source.require_labels("evaluation")?;
    let Some(mode) = cell.method.mode() else {
        let pred = nn_classify(&task.source.x, labels, &task.target.x)?;
        let report = EvalReport::new(&pred, &task.target_labels)?;
        return Ok(RunMetrics {
            rmse: report.rmse,
            accuracy: report.accuracy,
            k: task.source.dim(),
            iterations: 0,
            converged: true,
        });
    };
    let mut cfg = TmdaConfig {
        mode,
        ..cfg.clone()
    };
    cfg.mapping = match cell.mapping.unwrap_or(cfg.mapping.into()) {
        CellMapping::Raw => Mapping::Raw,
        CellMapping::Linear => Mapping::Linear,
        CellMapping::Rbf => Mapping::Rbf,
        CellMapping::Auto => select_linear_strategy(&task.source, &task.target, &cfg)?
            .choice
            .mapping(),
    };
    let model = fit(&task.source, &task.target, &cfg)?;
    let (zs, zt) = model.embedded_training()?;
    let pred = nn_classify(&zs, labels, &zt)?;
    let report = EvalReport::new(&pred, &task.target_labels)?;
    Ok(RunMetrics {
        rmse: report.rmse,
        accuracy: report.accuracy,
        k: model.k(),
        iterations: model.trace.len(),
        converged: model.converged,
    })
}

#[derive(Debug, Clone, Copy)]
struct Job {
    cell: Cell,
    params: Params,
    rep: usize,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

fn execute(cfg: &ExperimentConfig, operation: Operation, jobs: Vec<Job>) -> Result<ResultsFile> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.repetitions)
        .map(|r| cfg.seed.wrapping_add(r as u64))
        .collect();
    let tasks: Vec<std::result::Result<TransferTask, String>> = seeds
        .par_iter()
        .map(|&s| cfg.task.load(s).map_err(|e| format!("task: {e}")))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|job| {
            let seed = seeds[job.rep];
            let outcome = match &tasks[job.rep] {
                Err(e) => Outcome::Failed(e.clone()),
                Ok(task) => {
                    let mut tmda = TmdaConfig {
                        seed,
                        ..cfg.tmda.clone()
                    };
                    job.params.apply(&mut tmda);
                    match catch_unwind(AssertUnwindSafe(|| run_cell(task, job.cell, &tmda))) {
                        Ok(Ok(m)) => Outcome::Ok(m),
                        Ok(Err(e)) => Outcome::Failed(e.to_string()),
                        Err(p) => Outcome::Failed(format!("panicked: {}", panic_message(p))),
                    }
                }
            };
            if let Outcome::Failed(msg) = &outcome {
                log::warn!("{} rep {}: {msg}", job.cell, job.rep);
            }
            RunRecord {
                cell: job.cell,
                params: job.params,
                rep: job.rep,
                seed,
                outcome,
            }
        })
        .collect();

    let mut summaries: Vec<SummaryRow> = Vec::new();
    for r in &runs {
        if summaries
            .iter()
            .any(|s| s.cell == r.cell && s.params.same(&r.params))
        {
            continue;
        }
        let group: Vec<&RunRecord> = runs
            .iter()
            .filter(|o| o.cell == r.cell && o.params.same(&r.params))
            .collect();
        let ok: Vec<&RunMetrics> = group.iter().filter_map(|o| o.metrics()).collect();
        let rmse: Vec<f64> = ok.iter().map(|m| m.rmse).collect();
        let acc: Vec<f64> = ok.iter().map(|m| m.accuracy).collect();
        summaries.push(SummaryRow {
            cell: r.cell,
            params: r.params,
            runs: group.len(),
            failed: group.len() - ok.len(),
            rmse: Stats::of(&rmse),
            accuracy: Stats::of(&acc),
        });
    }
    Ok(ResultsFile {
        operation,
        seed: cfg.seed,
        repetitions: cfg.repetitions,
        config_hash: cfg.hash(),
        version: crate::VERSION.to_string(),
        runs,
        summaries,
    })
}

fn grid(cfg: &ExperimentConfig, cells: &[Cell], params: &[Params]) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &p in params {
        for rep in 0..cfg.repetitions {
            for &cell in cells {
                jobs.push(Job {
                    cell,
                    params: p,
                    rep,
                });
            }
        }
    }
    jobs
}

/// Every comparison cell on every repetition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsFile> {
    if cfg.comparison.is_empty() {
        return invalid("comparison set is empty");
    }
    execute(
        cfg,
        Operation::Experiment,
        grid(cfg, &cfg.comparison, &[Params::default()]),
    )
}

/// Full-mode fits for each manifold count.
pub fn sweep_manifold_count(cfg: &ExperimentConfig, n_values: &[usize]) -> Result<ResultsFile> {
    if n_values.is_empty() {
        return invalid("no manifold counts to sweep");
    }
    if n_values.contains(&0) {
        return invalid("manifold counts must be at least 1");
    }
    let params: Vec<Params> = n_values
        .iter()
        .map(|&n| Params {
            n_manifolds: Some(n),
            ..Default::default()
        })
        .collect();
    let cell = Cell::new(Method::M3d, cfg.tmda.mapping);
    execute(cfg, Operation::SweepManifolds, grid(cfg, &[cell], &params))
}

/// Full-mode fits over the `alpha x beta` grid, alpha-major.
pub fn sweep_sensitivity(
    cfg: &ExperimentConfig,
    alpha_values: &[f64],
    beta_values: &[f64],
) -> Result<ResultsFile> {
    if alpha_values.is_empty() || beta_values.is_empty() {
        return invalid("sensitivity grid is empty");
    }
    let mut params = Vec::new();
    for &alpha in alpha_values {
        for &beta in beta_values {
            params.push(Params {
                alpha: Some(alpha),
                beta: Some(beta),
                ..Default::default()
            });
        }
    }
    let cell = Cell::new(Method::M3d, cfg.tmda.mapping);
    execute(
        cfg,
        Operation::SweepSensitivity,
        grid(cfg, &[cell], &params),
    )
}

/// The four ablation columns: no transfer, global discrepancy, decoupled
/// and full, all with the configured mapping.
pub fn ablation_cells(mapping: Mapping) -> [Cell; 4] {
    [
        Cell::NO_TRANSFER,
        Cell::new(Method::Mmd, mapping),
        Cell::new(Method::Decoupled, mapping),
        Cell::new(Method::M3d, mapping),
    ]
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ResultsFile> {
    let cells = ablation_cells(cfg.tmda.mapping);
    execute(
        cfg,
        Operation::Ablation,
        grid(cfg, &cells, &[Params::default()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            repetitions: 2,
            comparison: vec![
                Cell::NO_TRANSFER,
                "mmd_linear".parse().unwrap(),
                "m3d_rbf".parse().unwrap(),
            ],
            task: TaskSource::Synthetic(SynthConfig {
                n_manifolds: 2,
                ambient_dim: 6,
                manifold_dim: 2,
                points_per_manifold: 6,
                ..Default::default()
            }),
            tmda: TmdaConfig {
                n_manifolds: 2,
                k: Some(2),
                max_outer: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn cell_names_round_trip() {
        for c in Cell::table() {
            assert_eq!(c.to_string().parse::<Cell>().unwrap(), c);
        }
        assert_eq!("v1_rbf".parse::<Cell>().unwrap().to_string(), "mmd_rbf");
        assert!("m3d".parse::<Cell>().is_err());
        assert!("nt_rbf".parse::<Cell>().is_err());
        assert_eq!(Cell::table().len(), 7);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = small();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let elsewhere = ExperimentConfig {
            output: Some("x.txt".into()),
            ..cfg.clone()
        };
        assert_eq!(elsewhere.hash(), cfg.hash());
        let other = ExperimentConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
        assert!(ExperimentConfig::from_toml("repetitions = 2\nbogus = 1\n").is_err());
        let files = ExperimentConfig::from_toml(
            "[task.files]\nsource = \"s.txt\"\nsource_labels = \"sl.txt\"\ntarget = \"t.txt\"\ntarget_labels = \"tl.txt\"\n",
        )
        .unwrap();
        assert!(matches!(files.task, TaskSource::Files(_)));
    }

    #[test]
    fn experiment_results_round_trip() {
        let res = run_experiment(&small()).unwrap();
        assert_eq!(res.runs.len(), 6);
        assert_eq!(res.summaries.len(), 3);
        assert!(res.all_ok());
        let text = res.format();
        assert_eq!(ResultsFile::parse(&text).unwrap(), res);
        for line in text.lines() {
            assert!(
                line.contains("config=") && line.contains("version=") && line.contains("seed=")
            );
        }
        let table = res.table();
        assert_eq!(table.lines().count(), 1 + 2 + 1);
        assert!(table.starts_with("rep,nt,mmd_linear,m3d_rbf"));
    }

    #[test]
    fn failures_are_isolated() {
        let mut cfg = small();
        // more manifolds than points fails the fits, not the baseline
        cfg.tmda.n_manifolds = 1000;
        let res = run_experiment(&cfg).unwrap();
        assert!(!res.all_ok());
        let nt = res.summary(Cell::NO_TRANSFER, Params::default()).unwrap();
        assert_eq!(nt.failed, 0);
        let m3d = res
            .summary("m3d_rbf".parse().unwrap(), Params::default())
            .unwrap();
        assert_eq!(m3d.failed, 2);
        assert!(m3d.rmse.is_none());
        assert_eq!(ResultsFile::parse(&res.format()).unwrap(), res);
    }

    #[test]
    fn quoted_fields() {
        let f = Fields::parse(r#"a=1 msg="x \"y\" \\ z" b=2"#).unwrap();
        assert_eq!(f.get("msg").unwrap(), r#"x "y" \ z"#);
        assert_eq!(f.get("b").unwrap(), "2");
        assert!(Fields::parse(r#"msg="open"#).is_err());
        assert!(Fields::parse("a=1 a=2").is_err());
        let s = "multi\nline \"quoted\"";
        let q = quote(s);
        assert_eq!(
            Fields::parse(&format!("e={q}")).unwrap().get("e").unwrap(),
            s
        );
    }

    #[test]
    fn sweep_shapes() {
        let mut cfg = small();
        cfg.repetitions = 1;
        let n = sweep_manifold_count(&cfg, &[2]).unwrap();
        assert_eq!(n.summaries.len(), 1);
        let ab = sweep_sensitivity(&cfg, &[0.0, 0.01], &[1.0, 100.0, 10.0]).unwrap();
        assert_eq!(ab.summaries.len(), 6);
        assert!(ab
            .summary(
                Cell::new(Method::M3d, Mapping::Rbf),
                Params {
                    alpha: Some(0.01),
                    beta: Some(100.0),
                    ..Default::default()
                }
            )
            .is_some());
        let abl = run_ablation(&cfg).unwrap();
        assert_eq!(abl.summaries.len(), 4);
        assert_eq!(ResultsFile::parse(&abl.format()).unwrap(), abl);
    }

    #[test]
    fn one_by_one_grid_matches_experiment() {
        let mut cfg = small();
        cfg.comparison = vec![Cell::new(Method::M3d, Mapping::Rbf)];
        let plain = run_experiment(&cfg).unwrap();
        let grid = sweep_sensitivity(&cfg, &[cfg.tmda.alpha], &[cfg.tmda.beta]).unwrap();
        let a: Vec<_> = plain.runs.iter().map(|r| r.outcome.clone()).collect();
        let b: Vec<_> = grid.runs.iter().map(|r| r.outcome.clone()).collect();
        assert_eq!(a, b);
    }
}
