//! Command-line interface.
//!
//! Matrices are read and written in the text format of [`crate::data`];
//! labels are one integer per line. The config file is the TOML form of
//! [`ExperimentConfig`]; every subcommand reads the parts it needs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::data::{
    format_labels, format_matrix, hstack, read_labels, read_matrix, read_model, write_labels,
    write_matrix, write_model, Dataset,
};
use crate::discrepancy::{empirical_m3d, empirical_mmd, DomainSplit, ManifoldAssignment};
use crate::eval::{nn_classify, EvalReport};
use crate::experiment::{
    run_ablation, run_experiment, sweep_manifold_count, sweep_sensitivity, ExperimentConfig,
    ResultsFile, TaskSource,
};
use crate::kernels::{kernel_matrix, median_bandwidth, KernelSpec};
use crate::manifolds::{admm_affinity, ncut_cluster};
use crate::solver::fit;

/// Exit code when some experiment runs failed.
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tmda", version, about = "Manifold-aware discrepancy alignment")]
pub struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file, or directory for `generate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for experiment runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic task into a directory.
    Generate,
    /// Fit a model and save it.
    Fit(FitArgs),
    /// Embed points with a saved model.
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// 1-NN evaluation of embedded features.
    Evaluate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Empirical MMD between two samples.
    Mmd(PairArgs),
    /// Per-manifold MMD for a joint assignment.
    M3d {
        #[command(flatten)]
        pair: PairArgs,
        /// Manifold index (1-based) per source then target point.
        #[arg(long)]
        assignment: PathBuf,
    },
    /// Sparse affinity plus ncut on the columns of one or more matrices.
    Cluster {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Number of manifolds; defaults to the config value.
        #[arg(long)]
        n: Option<usize>,
    },
    /// The comparison table.
    Experiment,
    /// Sweep the manifold count.
    SweepN {
        #[arg(long, value_delimiter = ',')]
        n_values: Option<Vec<usize>>,
    },
    /// Sweep the alpha x beta grid.
    SweepAb {
        #[arg(long, value_delimiter = ',')]
        alpha_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        beta_values: Option<Vec<f64>>,
    },
    /// No transfer, global, decoupled and full side by side.
    Ablate,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub source_labels: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    /// Rbf gamma; the median heuristic when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.tmda.seed = cfg.seed;
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pair(args: &PairArgs) -> anyhow::Result<(DMatrix<f64>, DomainSplit, KernelSpec)> {
    let s = read_matrix(&args.source)?;
    let t = read_matrix(&args.target)?;
    let x = hstack(&s.x, &t.x)?;
    let split = DomainSplit::new(s.len(), t.len())?;
    let spec = match args.kernel {
        KernelArg::Linear => KernelSpec::Linear,
        KernelArg::Rbf => KernelSpec::rbf(match args.gamma {
            Some(g) => g,
            None => median_bandwidth(&x)?,
        })?,
    };
    Ok((x, split, spec))
}

fn finish(res: &ResultsFile, cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    emit(cfg.output.as_deref(), &res.format())?;
    if cfg.output.is_some() {
        print!("{}", res.table());
    }
    if res.all_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} runs failed", res.n_failed(), res.runs.len());
        Ok(ExitCode::from(EXIT_PARTIAL))
    }
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Generate => {
            let TaskSource::Synthetic(synth) = &cfg.task else {
                bail!("generate needs a synthetic task");
            };
            let mut synth = synth.clone();
            synth.seed = cfg.seed;
            let task = crate::data::generate_synthetic(&synth)?;
            let dir = out.unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            write_matrix(dir.join("source.txt"), &task.source)?;
            write_labels(
                dir.join("source_labels.txt"),
                task.source.require_labels("source")?,
            )?;
            write_matrix(dir.join("target.txt"), &task.target)?;
            write_labels(dir.join("target_labels.txt"), &task.target_labels)?;
        }
        Command::Fit(args) => {
            let Some(path) = out else {
                bail!("fit needs --out for the model file");
            };
            let source = Dataset::with_labels(
                read_matrix(&args.source)?.x,
                read_labels(&args.source_labels)?,
            )?;
            let target = read_matrix(&args.target)?;
            let model = fit(&source, &target, &cfg.tmda)?;
            for t in &model.trace {
                println!(
                    "iteration={} m3d={} objective={} a_change={} w_change={} admm_iterations={} skipped={}",
                    t.iteration,
                    t.m3d,
                    t.objective,
                    t.a_change,
                    t.w_change,
                    t.admm_iterations,
                    t.skipped_manifolds
                );
            }
            println!(
                "k={} converged={} rank={} mu={}",
                model.k(),
                model.converged,
                model.weights.rank,
                model.mu
            );
            write_model(path, &model.projection())?;
        }
        Command::Transform { model, input } => {
            let model = read_model(model)?;
            let z = model.transform(&read_matrix(input)?.x)?;
            emit(out, &format_matrix(&z))?;
        }
        Command::Evaluate {
            train,
            train_labels,
            test,
            truth,
        } => {
            let pred = nn_classify(
                &read_matrix(train)?.x,
                &read_labels(train_labels)?,
                &read_matrix(test)?.x,
            )?;
            let report = EvalReport::new(&pred, &read_labels(truth)?)?;
            print!("{}", report.to_kv());
            if let Some(p) = out {
                fs::write(p, format_labels(&pred))?;
            }
        }
        Command::Mmd(args) => {
            let (x, split, spec) = pair(args)?;
            let v = empirical_mmd(&kernel_matrix(&x, spec)?, split)?;
            emit(out, &format!("mmd={v:e} kernel={spec}\n"))?;
        }
        Command::M3d {
            pair: args,
            assignment,
        } => {
            let (x, split, spec) = pair(args)?;
            let raw = read_labels(assignment)?;
            let labels = raw
                .iter()
                .map(|&l| usize::try_from(l).context("assignment labels must be positive"))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let n = labels.iter().copied().max().unwrap_or(0);
            let assign = ManifoldAssignment::new(labels, n)?;
            let v = empirical_m3d(&kernel_matrix(&x, spec)?, split, &assign)?;
            emit(
                out,
                &format!(
                    "m3d={:e} active={} skipped={} kernel={spec}\n",
                    v.value, v.active, v.skipped
                ),
            )?;
        }
        Command::Cluster { input, n } => {
            let mut x: Option<DMatrix<f64>> = None;
            for p in input {
                let m = read_matrix(p)?.x;
                x = Some(match x {
                    None => m,
                    Some(prev) => hstack(&prev, &m)?,
                });
            }
            let x = x.expect("clap requires one input");
            let none = DMatrix::zeros(1, x.ncols());
            let mut admm = cfg.tmda.admm.clone();
            admm.alpha = 0.0;
            let (a, _) = admm_affinity(&x, &none, &DMatrix::zeros(1, 1), &admm)?;
            let assign = ncut_cluster(&a, n.unwrap_or(cfg.tmda.n_manifolds), cfg.seed)?;
            emit(out, &format_labels(assign.labels()))?;
        }
        Command::Experiment => return finish(&run_experiment(&cfg)?, &cfg),
        Command::SweepN { n_values } => {
            let values = n_values
                .clone()
                .unwrap_or_else(|| cfg.sweep.n_values.clone());
            return finish(&sweep_manifold_count(&cfg, &values)?, &cfg);
        }
        Command::SweepAb {
            alpha_values,
            beta_values,
        } => {
            let a = alpha_values
                .clone()
                .unwrap_or_else(|| cfg.sweep.alpha_values.clone());
            let b = beta_values
                .clone()
                .unwrap_or_else(|| cfg.sweep.beta_values.clone());
            return finish(&sweep_sensitivity(&cfg, &a, &b)?, &cfg);
        }
        Command::Ablate => return finish(&run_ablation(&cfg)?, &cfg),
    }
    Ok(ExitCode::SUCCESS)
}

/// Parse arguments, set up logging and the thread pool, and run.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
