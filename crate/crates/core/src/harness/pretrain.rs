use super::{collect::load_prior, eval_task, write_json, ExperimentConfig, Result, ENCODER_FILE, PRETRAIN_DIR, PRIOR_DIR};
use crate::env::{GOAL_OFFSET, NUM_OBJECTS, STATE_DIM};
use crate::regressor::{probe_latent, train_multihead, LatentEncoder, MultiHeadNet, RegressorConfig};
use crate::rng::{derive_seed, rng_from, stream};
use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub rows: usize,
    pub head_mse: Vec<f64>,
    pub reward_scale: f64,
    /// Mean over evaluation tasks of the mean R^2 of a linear probe z -> o_0.
    pub probe_r2: f64,
    pub probe_r2_per_task: Vec<f64>,
    pub distractor: usize,
    /// Same probe towards the distractor object.
    pub distractor_r2: f64,
    pub pseudo_inverse: bool,
    pub config: RegressorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSummary {
    pub r2: f64,
    pub r2_per_task: Vec<f64>,
    pub distractor_r2: f64,
    pub pseudo_inverse: bool,
}

/// Probes `enc` on each evaluation task: states with every body uniform over
/// the sampling square and the task's goal, targets the object positions.
pub fn probe_tasks(cfg: &ExperimentConfig, enc: &LatentEncoder) -> Result<ProbeSummary> {
    let k = cfg.probe.states_per_task;
    let d = cfg.probe.distractor;
    let half = cfg.env.sample_half_width;
    let mut per_task = Vec::with_capacity(cfg.eval_tasks);
    let mut distractor = Vec::with_capacity(cfg.eval_tasks);
    let mut pinv = false;
    for m in 0..cfg.eval_tasks {
        let goal = eval_task(cfg, m)?.goal;
        let mut rng = rng_from(derive_seed(cfg.seed, &[stream::PROBE, m as u64]));
        let mut states = Array2::<f64>::zeros((k, STATE_DIM));
        for mut row in states.rows_mut() {
            for v in row.slice_mut(s![..GOAL_OFFSET]) {
                *v = rng.random_range(-half..=half);
            }
            row[GOAL_OFFSET] = goal.x;
            row[GOAL_OFFSET + 1] = goal.y;
        }
        let o0 = probe_latent(enc, states.view(), states.slice(s![.., 0..2]))?;
        let od = probe_latent(enc, states.view(), states.slice(s![.., 2 * d..2 * d + 2]))?;
        pinv |= o0.pseudo_inverse || od.pseudo_inverse;
        per_task.push(o0.mean_r2());
        distractor.push(od.mean_r2());
    }
    debug_assert!(d < NUM_OBJECTS);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ProbeSummary {
        r2: mean(&per_task),
        distractor_r2: mean(&distractor),
        r2_per_task: per_task,
        pseudo_inverse: pinv,
    })
}

/// Trains the multi-head regressor on the `collect` output and writes the
/// checkpoint and a JSON report next to it.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<(MultiHeadNet, PretrainReport)> {
    cfg.validate()?;
    let data = load_prior(&cfg.out_dir.join(PRIOR_DIR))?;
    let mut rcfg = cfg.regressor.clone();
    rcfg.seed = derive_seed(cfg.seed, &[stream::REGRESSOR, cfg.regressor.seed]);
    let (net, train) = train_multihead(&data, &rcfg)?;
    let probe = probe_tasks(cfg, &net.encoder())?;
    let dir = cfg.out_dir.join(PRETRAIN_DIR);
    std::fs::create_dir_all(&dir).map_err(super::io_err(&dir))?;
    net.save(&dir.join(ENCODER_FILE))?;
    let report = PretrainReport {
        rows: data.tasks.iter().map(|t| t.rewards.len()).sum(),
        head_mse: train.head_mse,
        reward_scale: train.reward_scale,
        probe_r2: probe.r2,
        probe_r2_per_task: probe.r2_per_task,
        distractor: cfg.probe.distractor,
        distractor_r2: probe.distractor_r2,
        pseudo_inverse: probe.pseudo_inverse,
        config: cfg.regressor.clone(),
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok((net, report))
}
