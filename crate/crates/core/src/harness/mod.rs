//! End-to-end pipeline: prior-task collection, regressor pretraining, the
//! bonus-mode training matrix, pure exploration and report aggregation.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! prior/tasks.json, prior/task{i}.jsonl
//! pretrain/regressor.ckpt, pretrain/report.json
//! runs/{mode}/task{m}_seed{s}/{run.json, metrics.csv, manifest.json}
//! pure/{mode}/task{k}/{run.json, metrics.csv, trajectories.csv}, pure/summary.json
//! report/{curves.csv, trajectories.csv, summary.json}
//! ```

pub mod collect;
pub mod config;
pub mod matrix;
pub mod pretrain;
pub mod pure;
pub mod report;

pub use collect::{collect_prior, load_prior, scripted_action, CollectOutcome};
pub use config::{CollectConfig, CollectSource, ExperimentConfig, ProbeConfig, PureConfig};
pub use matrix::{eval_task, run_cell, run_matrix, train_task, CellOutcome, Manifest, RunRecord, RunStatus};
pub use pretrain::{pretrain, probe_tasks, PretrainReport};
pub use pure::{occupancy_entropy, pure_exploration, PureStats};
pub use report::{aggregate, auc, final_return, report, ModeCurve, Summary};

use crate::env::EnvError;
use crate::policy::PolicyError;
use crate::regressor::RegressorError;
use std::path::{Path, PathBuf};

pub const PRIOR_DIR: &str = "prior";
pub const PRETRAIN_DIR: &str = "pretrain";
pub const RUNS_DIR: &str = "runs";
pub const PURE_DIR: &str = "pure";
pub const REPORT_DIR: &str = "report";
pub const ENCODER_FILE: &str = "regressor.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error("{0}")]
    Run(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
