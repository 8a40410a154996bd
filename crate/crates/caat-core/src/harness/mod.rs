//! Experiment harness: dataset ingestion, model evaluation, scenario
//! drivers, and the artifact manifest that makes a run reproducible.

pub mod data_io;
pub mod eval;
pub mod manifest;
pub mod scenario;

pub use data_io::{load_csv_dataset, load_idx_dataset, write_dataset_csv};
pub use eval::{evaluate_model, EvalReport, WORST_CLASS_MIN_COUNT};
pub use manifest::{RunManifest, RunStatus};
pub use scenario::{run_scenario, DatasetSource, ScenarioConfig, ScenarioKind};
