//! Command-line front end. Every subcommand is a thin shell around the
//! library: parse flags, call one driver, write the result.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use caat_core::adversary::AttackConfig;
use caat_core::harness::data_io::{case3_report_to_csv, load_csv_dataset, load_idx_dataset};
use caat_core::harness::manifest::RunStatus;
use caat_core::harness::{evaluate_model, run_scenario, ScenarioConfig};
use caat_core::montecarlo::{case3_experiment, Case3Config, LogisticOpt};
use caat_core::nn::load_checkpoint;
use caat_core::task::GaussianTaskSpec;
use caat_core::theory::{linspace, monotonicity_report, SweepMode};

/// Output root used when a command that writes a run directory gets no
/// explicit `--out`.
const OUT_ROOT_VAR: &str = "CAAT_OUT_ROOT";

#[derive(Parser)]
#[command(name = "caat", version, about = "Imbalance-aware adversarial training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form per-class error curves along a budget-ratio grid.
    Theory(TheoryArgs),
    /// Label-noise sampling experiment on surrogate-loss linear training.
    Simulate(SimulateArgs),
    /// Train one algorithm on one seed of a scenario configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Evaluate(EvaluateArgs),
    /// Run every trainer and seed of a scenario configuration.
    RunScenario(RunScenarioArgs),
}

/// Two-Gaussian task flags shared by the closed-form commands.
#[derive(Args)]
struct TaskArgs {
    /// Feature dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Mean magnitude per coordinate.
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Standard deviation of class -1.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Variance ratio of class +1 over class -1.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Prior ratio of class -1 over class +1.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
}

impl TaskArgs {
    fn task(&self) -> GaussianTaskSpec {
        GaussianTaskSpec {
            d: self.d,
            eta: self.eta,
            sigma_minus: self.sigma,
            k_factor: self.k,
            v_factor: self.v,
            noise: None,
        }
    }
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Perturbation budget of class -1.
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Direction of class -1's perturbation.
    #[arg(long, value_parser = ["adversarial", "combined"], default_value = "combined")]
    mode: String,
    /// Largest budget ratio on the grid.
    #[arg(long, default_value_t = 1.0)]
    grid_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Fraction of the flipped class whose labels are wrong.
    #[arg(long, default_value_t = 0.2)]
    flip_ratio: f64,
    /// Class whose labels get flipped (-1 or 1).
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    flipped_class: i8,
    /// Adversarial budget for clean samples and evaluation.
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Anti-adversarial strengths tried on the flipped samples.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.6, 1.0])]
    rho: Vec<f64>,
    /// Rows per sampled training set.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Trainer to run; defaults to the first one in the configuration.
    #[arg(long)]
    trainer: Option<String>,
    /// Seed to run; defaults to the first one in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to a subdirectory of $CAAT_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint produced by `train` or `run-scenario`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV to evaluate on.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    data: Option<PathBuf>,
    /// IDX image file (with --labels).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file (with --images).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Attack budget; defaults to 8/255 for [0, 1]-scaled data.
    #[arg(long)]
    eps: Option<f64>,
    /// Attack iterations.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Seed of the attack noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunScenarioArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to a subdirectory of $CAAT_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| path.display().to_string())?;
            println!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let cfg: ScenarioConfig =
        toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
    Ok(cfg)
}

/// Resolves a run directory: the flag wins, then `$CAAT_OUT_ROOT/<leaf>`.
fn resolve_out(out: Option<PathBuf>, leaf: &str) -> Result<PathBuf> {
    if let Some(dir) = out {
        return Ok(dir);
    }
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) => Ok(PathBuf::from(root).join(leaf)),
        None => bail!("pass --out or set {OUT_ROOT_VAR}"),
    }
}

fn finish_run(cfg: &ScenarioConfig, dir: &Path) -> Result<()> {
    let manifest = run_scenario(cfg, dir)?;
    println!(
        "{}: {} artifacts in {}",
        cfg.kind.name(),
        manifest.artifacts.len(),
        dir.display()
    );
    if manifest.status == RunStatus::Failed {
        bail!(
            "run failed: {} (partial artifacts kept in {})",
            manifest.failure.as_deref().unwrap_or("unknown"),
            dir.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Theory(args) => {
            let mode = match args.mode.as_str() {
                "adversarial" => SweepMode::AdversarialOnly,
                _ => SweepMode::Combined,
            };
            let grid = linspace(0.0, args.grid_max, args.grid_points);
            let report = monotonicity_report(&args.task.task(), args.eps, mode, &grid)?;
            emit(args.out.as_deref(), &report.to_csv())
        }
        Command::Simulate(args) => {
            let report = case3_experiment(&Case3Config {
                task: args.task.task(),
                flip_ratio: args.flip_ratio,
                flipped_class: args.flipped_class,
                eps: args.eps,
                rho_grid: args.rho,
                n: args.n,
                seeds: args.seeds,
                opt: LogisticOpt::default(),
            })?;
            let summary = serde_json::json!({
                "control_worst_rob": report.control_worst_rob,
                "flipped_class_noninc": report.flipped_class_noninc,
                "other_class_nondec": report.other_class_nondec,
                "beats_adversarial_control": report.beats_adversarial_control,
            });
            eprintln!("{summary}");
            emit(args.out.as_deref(), &case3_report_to_csv(&report))
        }
        Command::Train(args) => {
            let mut cfg = load_config(&args.config)?;
            if let Some(name) = args.trainer {
                cfg.trainers = vec![name];
            } else {
                cfg.trainers.truncate(1);
            }
            if let Some(seed) = args.seed {
                cfg.seeds = vec![seed];
            } else {
                cfg.seeds.truncate(1);
            }
            let trainer = cfg.trainers.first().cloned().unwrap_or_default();
            let seed = cfg.seeds.first().copied().unwrap_or_default();
            let leaf = format!("{}-{trainer}-seed{seed}", cfg.kind.name());
            let dir = resolve_out(args.out, &leaf)?;
            finish_run(&cfg, &dir)
        }
        Command::Evaluate(args) => {
            let net = load_checkpoint(&args.checkpoint)?;
            let data = match (&args.data, &args.images, &args.labels) {
                (Some(csv), None, None) => load_csv_dataset(csv)?,
                (None, Some(images), Some(labels)) => load_idx_dataset(images, labels)?,
                _ => bail!("pass --data or both --images and --labels"),
            };
            let eps = match args.eps {
                Some(eps) => eps,
                None if data.domain_clip == Some((0.0, 1.0)) => 8.0 / 255.0,
                None => bail!("--eps is required for data without a [0, 1] domain"),
            };
            let attack = AttackConfig {
                steps: args.steps,
                domain_clip: data.domain_clip,
                ..AttackConfig::eval_default(eps)
            };
            let report = evaluate_model(&net, &data, &attack, args.seed)?;
            emit(args.out.as_deref(), &report.to_csv())
        }
        Command::RunScenario(args) => {
            let cfg = load_config(&args.config)?;
            let dir = resolve_out(args.out, cfg.kind.name())?;
            finish_run(&cfg, &dir)
        }
    }
}
