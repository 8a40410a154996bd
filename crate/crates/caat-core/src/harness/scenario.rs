//! Scenario drivers: one call that takes a declarative configuration,
//! trains and evaluates every (trainer, seed) pair, writes all tables and
//! checkpoints under one directory, and seals the directory with a
//! hash manifest. Reruns with the same configuration and seeds produce
//! byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClassDataset, SyntheticDataset};
use crate::error::CoreError;
use crate::harness::data_io::{
    adv_ratio_series_to_csv, case3_report_to_csv, load_csv_dataset, load_idx_dataset,
    train_log_to_csv,
};
use crate::harness::eval::{evaluate_model, EvalReport};
use crate::harness::manifest::{sha256_hex, RunManifest, RunStatus};
use crate::montecarlo::{case3_experiment, sample_dataset, Case3Config, LogisticOpt};
use crate::nn::save_checkpoint;
use crate::task::GaussianTaskSpec;
use crate::theory::{monotonicity_report, optimal_robust_bias, SweepMode};
use crate::theory::class_errors_linear;
use crate::task::{ClassLabel, PerturbPolicy};
use crate::trainer::{trainer, TrainConfig};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Variance-imbalanced synthetic task.
    Case1,
    /// Prior-imbalanced synthetic task.
    Case2,
    /// Label noise on one class of a synthetic task.
    Case3,
    /// Dataset read from files.
    Ingested,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Case1 => "case1",
            ScenarioKind::Case2 => "case2",
            ScenarioKind::Case3 => "case3",
            ScenarioKind::Ingested => "ingested",
        }
    }
}

/// Where an ingested scenario reads its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "format")]
pub enum DatasetSource {
    Csv {
        train: PathBuf,
        test: PathBuf,
        /// Optional held-out meta set; trainers that need one carve it
        /// from the training data when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<PathBuf>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DatasetSource {
    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Csv { train, test, meta } => {
                let mut v = vec![train.as_path(), test.as_path()];
                if let Some(m) = meta {
                    v.push(m.as_path());
                }
                v
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![
                train_images.as_path(),
                train_labels.as_path(),
                test_images.as_path(),
                test_labels.as_path(),
            ],
        }
    }
}

fn default_trainers() -> Vec<String> {
    vec!["caat".into(), "pgd-at".into()]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_train_n() -> usize {
    2000
}

fn default_test_n() -> usize {
    4000
}

fn default_sim_n() -> usize {
    2000
}

fn default_theory_rho_grid() -> Vec<f64> {
    crate::theory::linspace(0.0, 1.0, 20)
}

fn default_sim_rho_grid() -> Vec<f64> {
    vec![0.0, 0.3, 0.6, 1.0]
}

/// Everything a run depends on, minus the output directory. Serialized
/// verbatim into the run directory so the manifest can hash it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Synthetic task; required for every kind but `ingested`. Case 3
    /// expects the label noise on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<GaussianTaskSpec>,
    /// Data files; required for `ingested`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DatasetSource>,
    #[serde(default = "default_trainers")]
    pub trainers: Vec<String>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Training rows sampled per seed (synthetic kinds).
    #[serde(default = "default_train_n")]
    pub train_n: usize,
    /// Evaluation rows sampled per seed (synthetic kinds).
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    /// Budget-ratio grid of the closed-form sweep (cases 1 and 2).
    #[serde(default = "default_theory_rho_grid")]
    pub theory_rho_grid: Vec<f64>,
    /// Anti-adversarial strength grid of the sampling experiment (case 3).
    #[serde(default = "default_sim_rho_grid")]
    pub sim_rho_grid: Vec<f64>,
    /// Training rows per sampled dataset in the sampling experiment.
    #[serde(default = "default_sim_n")]
    pub sim_n: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::invalid("seeds must be nonempty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CoreError::invalid("seeds must be distinct"));
        }
        if self.trainers.is_empty() {
            return Err(CoreError::invalid("trainers must be nonempty"));
        }
        for name in &self.trainers {
            trainer(name)?;
        }
        self.train.validate()?;
        if self.train_n == 0 || self.test_n == 0 || self.sim_n == 0 {
            return Err(CoreError::invalid("sample counts must be positive"));
        }
        match self.kind {
            ScenarioKind::Ingested => {
                let data = self
                    .data
                    .as_ref()
                    .ok_or_else(|| CoreError::invalid("ingested scenario needs data paths"))?;
                for path in data.paths() {
                    if !path.exists() {
                        return Err(CoreError::Dataset(format!(
                            "{} does not exist",
                            path.display()
                        )));
                    }
                }
            }
            kind => {
                let task = self.task.as_ref().ok_or_else(|| {
                    CoreError::invalid(format!("{} scenario needs a task", kind.name()))
                })?;
                task.validate()?;
                match kind {
                    ScenarioKind::Case1 if !(task.k_factor > 1.0) => {
                        return Err(CoreError::invalid(
                            "case1 models a variance imbalance: k_factor must exceed 1",
                        ));
                    }
                    ScenarioKind::Case2 if !(task.v_factor > 1.0) => {
                        return Err(CoreError::invalid(
                            "case2 models a prior imbalance: v_factor must exceed 1",
                        ));
                    }
                    ScenarioKind::Case3 => match task.noise {
                        Some(noise) if noise.flip_ratio > 0.0 => {}
                        _ => {
                            return Err(CoreError::invalid(
                                "case3 models label noise: the task needs a positive flip_ratio",
                            ));
                        }
                    },
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Per-run evaluation summary entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerEval {
    pub trainer: String,
    pub seed: u64,
    pub eval: EvalReport,
}

/// Scalar outcomes of the sampling experiment (case 3).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub control_worst_rob: f64,
    pub flipped_class_noninc: bool,
    pub other_class_nondec: bool,
    pub beats_adversarial_control: bool,
}

/// `summary.json`: the aggregate results of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub evals: Vec<TrainerEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSummary>,
}

/// Splits an iid sample into a training head and an evaluation tail.
fn split_synthetic(synth: &SyntheticDataset, train_n: usize) -> (ClassDataset, ClassDataset) {
    let cut = train_n * synth.d;
    let head = SyntheticDataset {
        features: synth.features[..cut].to_vec(),
        d: synth.d,
        labels: synth.labels[..train_n].to_vec(),
        clean_labels: synth.clean_labels[..train_n].to_vec(),
        seed: synth.seed,
    };
    let tail = SyntheticDataset {
        features: synth.features[cut..].to_vec(),
        d: synth.d,
        labels: synth.labels[train_n..].to_vec(),
        clean_labels: synth.clean_labels[train_n..].to_vec(),
        seed: synth.seed,
    };
    (ClassDataset::from(&head), ClassDataset::from(&tail))
}

struct RunArtifacts<'a> {
    dir: &'a Path,
    summary: RunSummary,
}

impl RunArtifacts<'_> {
    fn write(&self, rel: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(rel), content)?;
        Ok(())
    }

    /// Trains one (trainer, seed) pair, writes its log, checkpoint, and
    /// evaluation table, and records the evaluation in the summary.
    fn train_and_eval(
        &mut self,
        name: &str,
        train_data: &ClassDataset,
        meta: Option<&ClassDataset>,
        test_data: &ClassDataset,
        cfg: &TrainConfig,
        seed: u64,
        adv_series: bool,
    ) -> Result<()> {
        let algo = trainer(name)?;
        let outcome = algo.train(train_data, meta, cfg, seed)?;
        let stem = format!("{name}-seed{seed}");
        self.write(
            &format!("train-metrics-{stem}.csv"),
            &train_log_to_csv(&outcome.log),
        )?;
        if adv_series {
            self.write(
                &format!("adv-ratio-{stem}.csv"),
                &adv_ratio_series_to_csv(&outcome.log),
            )?;
        }
        save_checkpoint(&outcome.net, &self.dir.join(format!("checkpoint-{stem}.txt")))?;
        let attack = cfg.eval_attack(test_data.domain_clip);
        let eval = evaluate_model(&outcome.net, test_data, &attack, seed)?;
        self.write(&format!("eval-{stem}.csv"), &eval.to_csv())?;
        self.summary.evals.push(TrainerEval {
            trainer: name.to_string(),
            seed,
            eval,
        });
        Ok(())
    }
}

/// Closed-form sweep plus a theory-vs-trained table for the imbalance
/// scenarios.
fn run_imbalance(cfg: &ScenarioConfig, art: &mut RunArtifacts) -> Result<()> {
    let task = cfg.task.as_ref().expect("validated");
    let eps = cfg.train.base_eps;
    let sweep = monotonicity_report(task, eps, SweepMode::Combined, &cfg.theory_rho_grid)?;
    art.write("theory.csv", &sweep.to_csv())?;

    // Exact rates of the best robust linear rule at the shared budget, the
    // yardstick each trained model is compared against.
    let policy = PerturbPolicy::uniform_adversarial(eps);
    let oracle = optimal_robust_bias(task, &policy)?;
    let mut table = String::from("# theory-vs-trained v1\n");
    table.push_str(
        "seed,trainer,class,err_nat_theory,err_rob_theory,err_nat_model,err_rob_model\n",
    );

    for &seed in &cfg.seeds {
        let synth = sample_dataset(task, cfg.train_n + cfg.test_n, seed)?;
        let (train_data, test_data) = split_synthetic(&synth, cfg.train_n);
        for name in &cfg.trainers {
            art.train_and_eval(name, &train_data, None, &test_data, &cfg.train, seed, false)?;
            let eval = &art.summary.evals.last().expect("just pushed").eval;
            for class in [ClassLabel::Minus, ClassLabel::Plus] {
                let exact = class_errors_linear(task, &oracle, &policy, class)?;
                let c = class.index();
                table.push_str(&format!(
                    "{seed},{name},{c},{},{},{},{}\n",
                    exact.natural,
                    exact.robust,
                    eval.nat[c].unwrap_or(f64::NAN),
                    eval.rob[c].unwrap_or(f64::NAN),
                ));
            }
        }
    }
    art.write("theory-vs-trained.csv", &table)
}

/// Label-noise scenario: network training on the noisy task, evaluation on
/// clean data, plus the linear sampling experiment.
fn run_label_noise(cfg: &ScenarioConfig, art: &mut RunArtifacts) -> Result<()> {
    let task = cfg.task.as_ref().expect("validated");
    let noise = task.noise.expect("validated");
    let clean_task = GaussianTaskSpec {
        noise: None,
        ..task.clone()
    };

    for &seed in &cfg.seeds {
        let train_synth = sample_dataset(task, cfg.train_n, seed)?;
        let train_data = ClassDataset::from(&train_synth);
        // Fresh stream for the clean evaluation rows; offsetting the seed
        // keeps them disjoint from every training draw.
        let test_synth = sample_dataset(&clean_task, cfg.test_n, seed ^ 0x7465_7374)?;
        let test_data = ClassDataset::from(&test_synth);
        for name in &cfg.trainers {
            art.train_and_eval(name, &train_data, None, &test_data, &cfg.train, seed, true)?;
        }
    }

    let report = case3_experiment(&Case3Config {
        task: clean_task,
        flip_ratio: noise.flip_ratio,
        flipped_class: noise.flipped_class,
        eps: cfg.train.base_eps,
        rho_grid: cfg.sim_rho_grid.clone(),
        n: cfg.sim_n,
        seeds: cfg.seeds.clone(),
        opt: LogisticOpt::default(),
    })?;
    art.write("simulate.csv", &case3_report_to_csv(&report))?;
    art.summary.simulate = Some(SimulateSummary {
        control_worst_rob: report.control_worst_rob,
        flipped_class_noninc: report.flipped_class_noninc,
        other_class_nondec: report.other_class_nondec,
        beats_adversarial_control: report.beats_adversarial_control,
    });
    Ok(())
}

fn run_ingested(cfg: &ScenarioConfig, art: &mut RunArtifacts) -> Result<()> {
    let source = cfg.data.as_ref().expect("validated");
    let (train_data, test_data, meta) = match source {
        DatasetSource::Csv { train, test, meta } => {
            let meta = meta.as_ref().map(|p| load_csv_dataset(p)).transpose()?;
            (load_csv_dataset(train)?, load_csv_dataset(test)?, meta)
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx_dataset(train_images, train_labels)?,
            load_idx_dataset(test_images, test_labels)?,
            None,
        ),
    };
    for &seed in &cfg.seeds {
        for name in &cfg.trainers {
            art.train_and_eval(
                name,
                &train_data,
                meta.as_ref(),
                &test_data,
                &cfg.train,
                seed,
                false,
            )?;
        }
    }
    Ok(())
}

/// Runs a scenario into `out_dir` and seals it with a manifest.
///
/// The directory is created if needed. A failing trainer or writer does
/// not abort the call: whatever was produced is still hashed and the
/// manifest records the failure, so partial runs are never mistaken for
/// complete ones. The `Err` path is reserved for an invalid configuration
/// or an unusable output directory.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let config_json = serde_json::to_string_pretty(cfg)
        .map_err(|e| CoreError::invalid(format!("config serialization: {e}")))?;
    fs::write(out_dir.join("config.json"), &config_json)?;
    let config_sha256 = sha256_hex(config_json.as_bytes());

    let mut art = RunArtifacts {
        dir: out_dir,
        summary: RunSummary {
            evals: Vec::new(),
            simulate: None,
        },
    };
    let result = match cfg.kind {
        ScenarioKind::Case1 | ScenarioKind::Case2 => run_imbalance(cfg, &mut art),
        ScenarioKind::Case3 => run_label_noise(cfg, &mut art),
        ScenarioKind::Ingested => run_ingested(cfg, &mut art),
    };
    let summary_json = serde_json::to_string_pretty(&art.summary)
        .map_err(|e| CoreError::invalid(format!("summary serialization: {e}")))?;
    fs::write(out_dir.join("summary.json"), summary_json)?;

    let (status, failure) = match result {
        Ok(()) => (RunStatus::Completed, None),
        Err(e) => (RunStatus::Failed, Some(e.to_string())),
    };
    let manifest = RunManifest::collect(
        out_dir,
        cfg.kind.name(),
        &cfg.seeds,
        status,
        failure,
        config_sha256,
    )?;
    manifest.write(out_dir)?;
    Ok(manifest)
}
