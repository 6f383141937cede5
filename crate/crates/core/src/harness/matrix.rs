use super::{io_err, report, write_json, ExperimentConfig, HarnessError, Result, RUNS_DIR};
use crate::env::{sample_task, TaskSpec};
use crate::policy::{explore_loop, BonusMode, ExploreConfig, ExploreOptions, IterationMetrics, CHECKPOINT_FILE, METRICS_FILE};
use crate::regressor::LatentEncoder;
use crate::rng::{derive_seed, fingerprint, stream};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderRef {
    pub path: PathBuf,
    pub fingerprint: u64,
}

/// Self-describing result of one (mode, task, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: BonusMode,
    pub task_index: usize,
    pub seed_index: usize,
    pub run_seed: u64,
    pub task: TaskSpec,
    pub config: ExploreConfig,
    pub encoder: Option<EncoderRef>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Mean return per iteration.
    pub curve: Vec<f64>,
    pub final_return: f64,
    pub auc: f64,
    pub accepted_steps: usize,
    /// Accepted steps whose measured KL exceeded the limit.
    pub kl_violations: usize,
    pub max_accepted_kl: f64,
}

/// Files a run touched, for checking that runs stay isolated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub reads: Vec<PathBuf>,
    pub writes: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub metrics: Vec<IterationMetrics>,
}

pub fn eval_task(cfg: &ExperimentConfig, index: usize) -> Result<TaskSpec> {
    Ok(sample_task(
        derive_seed(cfg.seed, &[stream::EVAL_TASK, index as u64]),
        &cfg.env,
    )?)
}

/// Seed of cell (task, seed). Shared by every mode, so modes start from the
/// same initial networks.
pub fn run_seed(cfg: &ExperimentConfig, task_index: usize, seed_index: usize) -> u64 {
    derive_seed(cfg.seed, &[stream::RUN, task_index as u64, seed_index as u64])
}

pub fn run_dir(out_dir: &Path, mode: BonusMode, task_index: usize, seed_index: usize) -> PathBuf {
    out_dir
        .join(RUNS_DIR)
        .join(mode.as_str())
        .join(format!("task{task_index}_seed{seed_index}"))
}

pub fn load_encoder(cfg: &ExperimentConfig) -> Result<LatentEncoder> {
    let path = cfg.encoder_path();
    LatentEncoder::load(&path)
        .map_err(|e| HarnessError::Run(format!("latent mode needs a pretrained encoder at {}: {e}", path.display())))
}

/// Trains one cell and writes its run directory. A failing run is recorded
/// with status `failed` rather than returned as an error.
pub fn run_cell(
    cfg: &ExperimentConfig,
    mode: BonusMode,
    task_index: usize,
    seed_index: usize,
    encoder: Option<&LatentEncoder>,
    resume: bool,
) -> Result<CellOutcome> {
    let dir = run_dir(&cfg.out_dir, mode, task_index, seed_index);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let ecfg = cfg.explore_config(mode)?;
    let task = eval_task(cfg, task_index)?;
    let seed = run_seed(cfg, task_index, seed_index);
    let encoder = if mode == BonusMode::Latent { encoder } else { None };

    let mut manifest = Manifest::default();
    let enc_ref = encoder.map(|e| EncoderRef {
        path: cfg.encoder_path(),
        fingerprint: fingerprint(&e.trunk().params.values),
    });
    if let Some(r) = &enc_ref {
        manifest.reads.push(r.path.clone());
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    if resume && ckpt.exists() {
        manifest.reads.push(ckpt.clone());
    }

    let result = explore_loop(
        &task,
        &ecfg,
        encoder,
        seed,
        ExploreOptions {
            out_dir: Some(&dir),
            resume,
            on_batch: None,
        },
    );
    manifest.writes.push(dir.join(METRICS_FILE));
    if ckpt.exists() {
        manifest.writes.push(ckpt);
    }
    let (status, error, metrics) = match result {
        Ok(out) => (RunStatus::Ok, None, out.metrics),
        Err(e) => (RunStatus::Failed, Some(e.to_string()), Vec::new()),
    };
    let curve: Vec<f64> = metrics.iter().map(|m| m.mean_return).collect();
    let accepted: Vec<&IterationMetrics> = metrics.iter().filter(|m| m.step_accepted).collect();
    let record = RunRecord {
        mode,
        task_index,
        seed_index,
        run_seed: seed,
        task,
        config: ecfg.clone(),
        encoder: enc_ref,
        status,
        error,
        final_return: report::final_return(&curve),
        auc: report::auc(&curve),
        curve,
        accepted_steps: accepted.len(),
        kl_violations: accepted.iter().filter(|m| m.kl > ecfg.trpo.kl_limit).count(),
        max_accepted_kl: accepted.iter().map(|m| m.kl).fold(0.0, f64::max),
    };
    manifest.writes.push(dir.join(RUN_FILE));
    manifest.writes.push(dir.join(MANIFEST_FILE));
    write_json(&dir.join(RUN_FILE), &record)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(CellOutcome { dir, record, metrics })
}

/// Runs `jobs` on up to `parallel` threads; results keep the job order.
pub(crate) fn run_parallel<T, F>(jobs: usize, parallel: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, jobs.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs {
                    break;
                }
                let out = f(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Every seed of one (mode, task) pair.
pub fn train_task(cfg: &ExperimentConfig, mode: BonusMode, task_index: usize, resume: bool) -> Result<Vec<CellOutcome>> {
    cfg.validate()?;
    let encoder = if mode == BonusMode::Latent { Some(load_encoder(cfg)?) } else { None };
    run_parallel(cfg.seeds_per_task, cfg.parallel, |s| {
        run_cell(cfg, mode, task_index, s, encoder.as_ref(), resume)
    })
    .into_iter()
    .collect()
}

/// All modes x evaluation tasks x seeds. Cells run independently; their order
/// in the result is mode-major, then task, then seed.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<CellOutcome>> {
    cfg.validate()?;
    let encoder = if cfg.modes.contains(&BonusMode::Latent) {
        Some(load_encoder(cfg)?)
    } else {
        None
    };
    let per_mode = cfg.eval_tasks * cfg.seeds_per_task;
    run_parallel(cfg.modes.len() * per_mode, cfg.parallel, |i| {
        let mode = cfg.modes[i / per_mode];
        let m = (i % per_mode) / cfg.seeds_per_task;
        let s = i % cfg.seeds_per_task;
        run_cell(cfg, mode, m, s, encoder.as_ref(), false)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_keeps_order() {
        let out = run_parallel(17, 4, |i| i * i);
        assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
        assert!(run_parallel(0, 3, |i| i).is_empty());
    }
}
