use super::matrix::{load_encoder, run_parallel};
use super::{io_err, write_file, write_json, ExperimentConfig, Result, PURE_DIR};
use crate::env::{rollout_batch, sample_task, PUSHER_OFFSET};
use crate::policy::{explore_loop, BonusMode, ExploreOptions};
use crate::regressor::LatentEncoder;
use crate::rng::{derive_seed, stream};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureTaskStats {
    pub task_index: usize,
    pub moved_fraction: f64,
    pub occupancy_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureStats {
    pub mode: BonusMode,
    /// Share of evaluation episodes that displaced `o_0` by more than the threshold.
    pub moved_fraction: f64,
    /// Mean over tasks of the pusher occupancy-grid entropy, in nats.
    pub occupancy_entropy: f64,
    pub episodes: usize,
    pub tasks: Vec<PureTaskStats>,
}

/// Shannon entropy (nats) of the histogram of `points` on a `grid x grid`
/// partition of `[-half, half]^2`.
pub fn occupancy_entropy(points: &[[f64; 2]], half: f64, grid: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; grid * grid];
    let cell = |v: f64| (((v + half) / (2.0 * half) * grid as f64).floor() as isize).clamp(0, grid as isize - 1) as usize;
    for p in points {
        counts[cell(p[1]) * grid + cell(p[0])] += 1;
    }
    let n = points.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.ln()
        })
        .sum()
}

fn run_one(cfg: &ExperimentConfig, mode: BonusMode, k: usize, encoder: Option<&LatentEncoder>) -> Result<PureTaskStats> {
    let ecfg = cfg.pure_explore_config(mode)?;
    let task = sample_task(derive_seed(cfg.seed, &[stream::PURE, k as u64]), &cfg.env)?;
    let dir = cfg.out_dir.join(PURE_DIR).join(mode.as_str()).join(format!("task{k}"));
    let out = explore_loop(
        &task,
        &ecfg,
        encoder,
        derive_seed(cfg.seed, &[stream::PURE, k as u64, 1]),
        ExploreOptions {
            out_dir: Some(&dir),
            ..Default::default()
        },
    )?;
    let seeds: Vec<u64> = (0..cfg.pure.episodes as u64)
        .map(|e| derive_seed(cfg.seed, &[stream::PURE, k as u64, 2, e]))
        .collect();
    let trajs = rollout_batch(&out.policy, &task, &cfg.env, ecfg.trpo.horizon, &seeds)?;

    let mut csv = String::from("episode,t,pusher_x,pusher_y,o0_x,o0_y,env_reward\n");
    let mut pusher = Vec::new();
    let mut moved = 0usize;
    for (e, tr) in trajs.iter().enumerate() {
        let states = tr.states.iter().chain(std::iter::once(&tr.final_state));
        for (t, s) in states.enumerate() {
            // the environment reward is zeroed during pure exploration
            let r = if t == 0 || ecfg.trpo.zero_env_reward { 0.0 } else { tr.rewards[t - 1] };
            let p = [s[PUSHER_OFFSET], s[PUSHER_OFFSET + 1]];
            writeln!(csv, "{e},{t},{},{},{},{},{r}", p[0], p[1], s[0], s[1]).unwrap();
            pusher.push(p);
        }
        let s0 = &tr.states[0];
        let f = &tr.final_state;
        if ((f[0] - s0[0]).powi(2) + (f[1] - s0[1]).powi(2)).sqrt() > cfg.pure.moved_threshold {
            moved += 1;
        }
    }
    write_file(&dir.join(TRAJECTORIES_FILE), csv.as_bytes())?;
    let stats = PureTaskStats {
        task_index: k,
        moved_fraction: moved as f64 / trajs.len() as f64,
        occupancy_entropy: occupancy_entropy(&pusher, cfg.env.board_half_width, cfg.pure.grid),
    };
    write_json(&dir.join("stats.json"), &stats)?;
    Ok(stats)
}

/// Trains one bonus-only policy per configured mode and task, then measures
/// how often its rollouts move the object of interest and how widely the
/// pusher roams.
pub fn pure_exploration(cfg: &ExperimentConfig) -> Result<Vec<PureStats>> {
    cfg.validate()?;
    let encoder = if cfg.pure.modes.contains(&BonusMode::Latent) {
        Some(load_encoder(cfg)?)
    } else {
        None
    };
    let root = cfg.out_dir.join(PURE_DIR);
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;
    let tasks = cfg.pure.tasks;
    let results = run_parallel(cfg.pure.modes.len() * tasks, cfg.parallel, |i| {
        let mode = cfg.pure.modes[i / tasks];
        let enc = if mode == BonusMode::Latent { encoder.as_ref() } else { None };
        run_one(cfg, mode, i % tasks, enc)
    });
    let mut results = results.into_iter();
    let mut stats = Vec::with_capacity(cfg.pure.modes.len());
    for &mode in &cfg.pure.modes {
        let per: Vec<PureTaskStats> = results.by_ref().take(tasks).collect::<Result<_>>()?;
        let n = per.len() as f64;
        stats.push(PureStats {
            mode,
            moved_fraction: per.iter().map(|t| t.moved_fraction).sum::<f64>() / n,
            occupancy_entropy: per.iter().map(|t| t.occupancy_entropy).sum::<f64>() / n,
            episodes: cfg.pure.episodes * tasks,
            tasks: per,
        });
    }
    // keep entries of modes trained by earlier invocations
    let path = root.join(SUMMARY_FILE);
    let mut merged: Vec<PureStats> = if path.exists() { super::read_json(&path)? } else { Vec::new() };
    merged.retain(|old| !stats.iter().any(|s| s.mode == old.mode));
    merged.extend(stats.iter().cloned());
    merged.sort_by_key(|s| s.mode);
    write_json(&path, &merged)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_and_point_masses() {
        assert_eq!(occupancy_entropy(&[[0.3, 0.3]; 10], 1.0, 20), 0.0);
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push([-0.95 + 0.1 * i as f64, -0.95 + 0.1 * j as f64]);
            }
        }
        assert!((occupancy_entropy(&pts, 1.0, 20) - (400f64).ln()).abs() < 1e-12);
        let two = [[-0.5, 0.0], [0.5, 0.0]];
        assert!((occupancy_entropy(&two, 1.0, 20) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_fall_in_edge_cells() {
        assert!((occupancy_entropy(&[[1.0, 1.0], [-1.0, -1.0]], 1.0, 20) - 2f64.ln()).abs() < 1e-12);
    }
}
