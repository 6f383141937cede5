use super::{io_err, read_json, write_json, ExperimentConfig, HarnessError, Result, PRIOR_DIR};
use crate::env::{sample_task, step, Action, EnvConfig, EnvState, StepRecord, TaskSpec, ACTION_DIM};
use crate::policy::{explore_loop, BonusMode, ExploreOptions, TrajectoryBatch};
use crate::regressor::{PriorTaskDataset, TaskData};
use crate::rng::{derive_seed, rng_from, stream};
use crate::env::Vec2;
use super::CollectSource;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const TASKS_FILE: &str = "tasks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTaskEntry {
    pub task_id: usize,
    /// Number of discarded draws before this task.
    pub resampled: usize,
    pub rows: usize,
    pub positive_rows: usize,
    pub file: String,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOutcome {
    pub dir: PathBuf,
    pub tasks: Vec<PriorTaskEntry>,
}

pub fn prior_task_seed(cfg: &ExperimentConfig, index: usize, attempt: usize) -> u64 {
    derive_seed(cfg.seed, &[stream::PRIOR_TASK, index as u64, attempt as u64])
}

/// Hand-coded push-to-goal controller: circle the object of interest to the
/// point behind it (seen from the goal), then push towards the goal.
pub fn scripted_action(state: &EnvState, cfg: &EnvConfig) -> [f64; 2] {
    let o = state.objects[0];
    let p = state.pusher;
    let to_goal = state.goal - o;
    let dist = to_goal.norm();
    if dist < 1e-9 {
        return [0.0, 0.0];
    }
    let dir = to_goal * (1.0 / dist);
    let contact = cfg.pusher_radius + cfg.object_radius;
    let orbit = contact + 0.04;
    let rel = p - o;
    let along = rel.x * dir.x + rel.y * dir.y;
    let lateral = (rel - dir * along).norm();
    let target = if along < 0.0 && lateral < 0.3 * contact && rel.norm() < orbit + 0.02 {
        // end the step just behind where the object will be after moving `push`
        let push = 0.6 * cfg.max_action.min(contact);
        o - dir * (contact - push)
    } else {
        let behind = o - dir * (contact + 0.02);
        let angle = |v: Vec2| v.y.atan2(v.x);
        let mut diff = angle(behind - o) - angle(rel);
        diff = (diff + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        if diff.abs() < 0.5 || rel.norm() > 3.0 * orbit {
            // clear path, or still far away: aim at the staging point
            if diff.abs() < 0.5 {
                behind
            } else {
                let phi = angle(rel) + diff.signum() * 0.8;
                o + Vec2::new(phi.cos(), phi.sin()) * orbit
            }
        } else {
            let phi = angle(rel) + diff.signum() * diff.abs().min(0.6);
            o + Vec2::new(phi.cos(), phi.sin()) * orbit
        }
    };
    let d = target - p;
    let n = d.norm();
    let scale = if n > cfg.max_action { cfg.max_action / n } else { 1.0 };
    [d.x * scale, d.y * scale]
}

fn scripted_records(task: &TaskSpec, task_id: usize, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<StepRecord>> {
    let c = &cfg.collect;
    let mut out = Vec::with_capacity(c.iterations * c.episodes_per_iter * cfg.env.horizon);
    for it in 0..c.iterations {
        for e in 0..c.episodes_per_iter {
            let mut rng = rng_from(derive_seed(seed, &[it as u64, e as u64]));
            let controlled = rng.random::<f64>() < c.controller_fraction;
            let mut state = task.initial_state();
            for t in 0..cfg.env.horizon {
                let mut a = if controlled {
                    scripted_action(&state, &cfg.env)
                } else {
                    [0.0; ACTION_DIM]
                };
                for aj in &mut a {
                    *aj = if controlled {
                        *aj + c.controller_noise * cfg.env.max_action * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        rng.random_range(-cfg.env.max_action..=cfg.env.max_action)
                    };
                }
                let res = step(&state, Action::new(a[0], a[1]), &cfg.env)?;
                out.push(StepRecord {
                    task_id,
                    iter: it,
                    t,
                    s: state.flatten().to_vec(),
                    a: a.to_vec(),
                    r: res.reward,
                    s_next: res.next_state.flatten().to_vec(),
                });
                state = res.next_state;
            }
        }
    }
    Ok(out)
}

fn batch_records(task_id: usize, iter: usize, b: &TrajectoryBatch, out: &mut Vec<StepRecord>) {
    for e in 0..b.episodes {
        for t in 0..b.horizon {
            let row = e * b.horizon + t;
            let s_next = if t + 1 < b.horizon {
                b.states.row(row + 1).to_vec()
            } else {
                b.final_states.row(e).to_vec()
            };
            out.push(StepRecord {
                task_id,
                iter,
                t,
                s: b.states.row(row).to_vec(),
                a: b.executed_actions.row(row).to_vec(),
                r: b.env_rewards[row],
                s_next,
            });
        }
    }
}

fn oracle_records(task: &TaskSpec, task_id: usize, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<StepRecord>> {
    let mut ecfg = cfg.explore_config(BonusMode::Oracle)?;
    ecfg.trpo.iterations = cfg.collect.iterations;
    ecfg.trpo.episodes_per_iter = cfg.collect.episodes_per_iter;
    let mut out = Vec::new();
    let mut sink = |iter: usize, b: &TrajectoryBatch| -> std::io::Result<()> {
        batch_records(task_id, iter - 1, b, &mut out);
        Ok(())
    };
    explore_loop(
        task,
        &ecfg,
        None,
        seed,
        ExploreOptions {
            on_batch: Some(&mut sink),
            ..Default::default()
        },
    )?;
    Ok(out)
}

fn write_jsonl(path: &Path, records: &[StepRecord]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Samples `N` prior tasks and writes one JSONL file of transitions per task.
/// A task whose data holds no positive reward is replaced by a fresh draw.
pub fn collect_prior(cfg: &ExperimentConfig) -> Result<CollectOutcome> {
    cfg.validate()?;
    let dir = cfg.out_dir.join(PRIOR_DIR);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut entries = Vec::with_capacity(cfg.prior_tasks);
    for i in 0..cfg.prior_tasks {
        let mut found = None;
        for attempt in 0..=cfg.collect.max_resample {
            let task = sample_task(prior_task_seed(cfg, i, attempt), &cfg.env)?;
            let seed = derive_seed(cfg.seed, &[stream::COLLECT, i as u64, attempt as u64]);
            let records = match cfg.collect.source {
                CollectSource::Scripted => scripted_records(&task, i, seed, cfg)?,
                CollectSource::TrpoOracle => oracle_records(&task, i, seed, cfg)?,
            };
            let positives = records.iter().filter(|r| r.r > 0.0).count();
            if positives > 0 {
                found = Some((attempt, task, records, positives));
                break;
            }
            eprintln!("prior task {i}: no positive-reward row on draw {attempt}, resampling");
        }
        let Some((attempt, task, records, positives)) = found else {
            return Err(HarnessError::Run(format!(
                "prior task {i}: no positive-reward row after {} draws",
                cfg.collect.max_resample + 1
            )));
        };
        let file = format!("task{i}.jsonl");
        write_jsonl(&dir.join(&file), &records)?;
        entries.push(PriorTaskEntry {
            task_id: i,
            resampled: attempt,
            rows: records.len(),
            positive_rows: positives,
            file,
            task,
        });
    }
    write_json(&dir.join(TASKS_FILE), &entries)?;
    Ok(CollectOutcome { dir, tasks: entries })
}

/// Reads a `collect` output directory. Each row pairs the state a reward was
/// earned on with that reward.
pub fn load_prior(dir: &Path) -> Result<PriorTaskDataset> {
    let entries: Vec<PriorTaskEntry> = read_json(&dir.join(TASKS_FILE))?;
    let mut tasks = Vec::with_capacity(entries.len());
    for e in entries {
        let path = dir.join(&e.file);
        let records = read_jsonl(&path)?;
        let width = records.first().map_or(0, |r| r.s_next.len());
        let mut flat = Vec::with_capacity(records.len() * width);
        for r in &records {
            if r.s_next.len() != width {
                return Err(HarnessError::Format {
                    path,
                    msg: "inconsistent state width".into(),
                });
            }
            flat.extend_from_slice(&r.s_next);
        }
        let states = Array2::from_shape_vec((records.len(), width), flat).expect("shape checked");
        tasks.push(TaskData {
            task_id: e.task_id,
            states,
            rewards: records.iter().map(|r| r.r).collect(),
        });
    }
    Ok(PriorTaskDataset { tasks })
}
