use super::matrix::{RunRecord, RunStatus, RUN_FILE};
use super::pure::{PureStats, SUMMARY_FILE as PURE_SUMMARY, TRAJECTORIES_FILE};
use super::{io_err, read_json, write_file, write_json, Result, PURE_DIR, REPORT_DIR};
use crate::policy::{BonusMode, METRICS_FILE};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Mean of the last tenth of the curve (at least one point).
pub fn final_return(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let k = (curve.len() / 10).max(1);
    curve[curve.len() - k..].iter().sum::<f64>() / k as f64
}

/// Area under the curve with unit spacing.
pub fn auc(curve: &[f64]) -> f64 {
    curve.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCurve {
    pub mode: BonusMode,
    /// Mean over tasks of the per-task mean over seeds.
    pub mean: Vec<f64>,
    /// Population standard deviation over all runs.
    pub std: Vec<f64>,
    pub runs: usize,
    pub tasks: usize,
    pub final_return: f64,
    pub auc: f64,
}

/// Aggregates successful runs per mode, in [`BonusMode`] order.
pub fn aggregate(records: &[RunRecord]) -> Vec<ModeCurve> {
    let mut by_mode: BTreeMap<BonusMode, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status == RunStatus::Ok && !r.curve.is_empty()) {
        by_mode.entry(r.mode).or_default().push(r);
    }
    by_mode
        .into_iter()
        .map(|(mode, runs)| {
            let len = runs.iter().map(|r| r.curve.len()).min().unwrap();
            let mut by_task: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
            for r in &runs {
                by_task.entry(r.task_index).or_default().push(r);
            }
            let mean: Vec<f64> = (0..len)
                .map(|t| {
                    by_task
                        .values()
                        .map(|rs| rs.iter().map(|r| r.curve[t]).sum::<f64>() / rs.len() as f64)
                        .sum::<f64>()
                        / by_task.len() as f64
                })
                .collect();
            let std: Vec<f64> = (0..len)
                .map(|t| {
                    let n = runs.len() as f64;
                    let m = runs.iter().map(|r| r.curve[t]).sum::<f64>() / n;
                    (runs.iter().map(|r| (r.curve[t] - m).powi(2)).sum::<f64>() / n).sqrt()
                })
                .collect();
            ModeCurve {
                mode,
                final_return: final_return(&mean),
                auc: auc(&mean),
                mean,
                std,
                runs: runs.len(),
                tasks: by_task.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub final_return: f64,
    pub auc: f64,
    pub runs: usize,
    pub tasks: usize,
    pub iterations: usize,
}

/// Ordering checks; `None` when the modes involved were not run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Verdicts {
    pub oracle_ge_latent: Option<bool>,
    pub latent_gt_state: Option<bool>,
    pub latent_over_oracle: Option<f64>,
    pub latent_ge_70pct_oracle: Option<bool>,
    pub latent_auc_gain_over_state: Option<f64>,
    pub latent_auc_ge_120pct_state: Option<bool>,
    pub latent_gt_action: Option<bool>,
    pub latent_gt_none: Option<bool>,
    pub none_lt_5pct_latent: Option<bool>,
    pub pure_oracle_moved_ge_2x_state: Option<bool>,
    pub pure_latent_moved_ge_2x_state: Option<bool>,
    pub pure_oracle_latent_moved_within_015: Option<bool>,
    pub pure_state_entropy_highest: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub modes: BTreeMap<BonusMode, ModeSummary>,
    pub verdicts: Verdicts,
    pub pure: Option<Vec<PureStats>>,
    pub errors: Vec<ReportError>,
    pub notes: Vec<String>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b)
}

pub fn verdicts(modes: &BTreeMap<BonusMode, ModeSummary>, pure: Option<&[PureStats]>) -> Verdicts {
    use BonusMode::*;
    let fin = |m| modes.get(&m).map(|s: &ModeSummary| s.final_return);
    let area = |m| modes.get(&m).map(|s: &ModeSummary| s.auc);
    let both = |a: Option<f64>, b: Option<f64>| a.zip(b);
    let latent_over_oracle = both(fin(Latent), fin(Oracle)).and_then(|(l, o)| ratio(l, o));
    let auc_gain = both(area(Latent), area(State)).and_then(|(l, s)| ratio(l, s)).map(|r| r - 1.0);
    let mut v = Verdicts {
        oracle_ge_latent: both(fin(Oracle), fin(Latent)).map(|(o, l)| o >= l),
        latent_gt_state: both(fin(Latent), fin(State)).map(|(l, s)| l > s),
        latent_over_oracle,
        latent_ge_70pct_oracle: both(fin(Latent), fin(Oracle)).map(|(l, o)| l >= 0.7 * o && (o > 0.0 || l > 0.0)),
        latent_auc_gain_over_state: auc_gain,
        latent_auc_ge_120pct_state: both(area(Latent), area(State)).map(|(l, s)| l >= 1.2 * s && l > 0.0),
        latent_gt_action: both(fin(Latent), fin(Action)).map(|(l, a)| l > a),
        latent_gt_none: both(fin(Latent), fin(None)).map(|(l, n)| l > n),
        none_lt_5pct_latent: both(fin(None), fin(Latent)).map(|(n, l)| n < 0.05 * l),
        ..Verdicts::default()
    };
    if let Some(p) = pure {
        let get = |m: BonusMode| p.iter().find(|s| s.mode == m);
        if let (Some(o), Some(s)) = (get(Oracle), get(State)) {
            v.pure_oracle_moved_ge_2x_state = Some(o.moved_fraction >= 2.0 * s.moved_fraction && o.moved_fraction > 0.0);
        }
        if let (Some(l), Some(s)) = (get(Latent), get(State)) {
            v.pure_latent_moved_ge_2x_state = Some(l.moved_fraction >= 2.0 * s.moved_fraction && l.moved_fraction > 0.0);
        }
        if let (Some(o), Some(l)) = (get(Oracle), get(Latent)) {
            v.pure_oracle_latent_moved_within_015 = Some((o.moved_fraction - l.moved_fraction).abs() < 0.15);
        }
        if let (Some(o), Some(l), Some(s)) = (get(Oracle), get(Latent), get(State)) {
            v.pure_state_entropy_highest =
                Some(s.occupancy_entropy > o.occupancy_entropy && s.occupancy_entropy > l.occupancy_entropy);
        }
    }
    v
}

fn sorted_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    out.sort();
    out
}

/// Collects run directories below `root`: every directory holding a
/// `run.json` or a `metrics.csv`. Pure-exploration and report outputs are skipped.
fn find_runs(root: &Path, out: &mut Vec<PathBuf>) {
    if root.join(RUN_FILE).exists() || root.join(METRICS_FILE).exists() {
        out.push(root.to_path_buf());
        return;
    }
    for d in sorted_dirs(root) {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == PURE_DIR || name == REPORT_DIR {
            continue;
        }
        find_runs(&d, out);
    }
}

fn pure_trajectories(root: &Path, csv: &mut String) {
    for mode_dir in sorted_dirs(&root.join(PURE_DIR)) {
        let mode = mode_dir.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        for task_dir in sorted_dirs(&mode_dir) {
            let task = task_dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("task"))
                .unwrap_or("")
                .to_string();
            let Ok(text) = std::fs::read_to_string(task_dir.join(TRAJECTORIES_FILE)) else {
                continue;
            };
            for line in text.lines().skip(1) {
                writeln!(csv, "{mode},{task},{line}").unwrap();
            }
        }
    }
}

/// Aggregates every run below `input` and writes `curves.csv`,
/// `trajectories.csv` and `summary.json` to `out`. Unreadable or failed runs
/// are listed under `errors`; the rest are still processed.
pub fn report(input: &Path, out: &Path) -> Result<Summary> {
    let mut dirs = Vec::new();
    find_runs(input, &mut dirs);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for d in dirs {
        match read_json::<RunRecord>(&d.join(RUN_FILE)) {
            Ok(r) => {
                if r.status == RunStatus::Failed {
                    errors.push(ReportError {
                        path: d.clone(),
                        message: format!("run failed: {}", r.error.clone().unwrap_or_default()),
                    });
                }
                records.push(r);
            }
            Err(e) => errors.push(ReportError {
                path: d.clone(),
                message: e.to_string(),
            }),
        }
    }
    let curves = aggregate(&records);

    let mut csv = String::from("iter,mode,mean,std\n");
    for c in &curves {
        for (t, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            writeln!(csv, "{},{},{m},{s}", t + 1, c.mode).unwrap();
        }
    }
    let mut traj = String::from("mode,task,episode,t,pusher_x,pusher_y,o0_x,o0_y,env_reward\n");
    pure_trajectories(input, &mut traj);

    let pure_path = input.join(PURE_DIR).join(PURE_SUMMARY);
    let pure: Option<Vec<PureStats>> = if pure_path.exists() {
        match read_json(&pure_path) {
            Ok(p) => Some(p),
            Err(e) => {
                errors.push(ReportError {
                    path: pure_path.clone(),
                    message: e.to_string(),
                });
                None
            }
        }
    } else {
        None
    };
    let modes: BTreeMap<BonusMode, ModeSummary> = curves
        .iter()
        .map(|c| {
            (
                c.mode,
                ModeSummary {
                    final_return: c.final_return,
                    auc: c.auc,
                    runs: c.runs,
                    tasks: c.tasks,
                    iterations: c.mean.len(),
                },
            )
        })
        .collect();
    let summary = Summary {
        verdicts: verdicts(&modes, pure.as_deref()),
        modes,
        pure,
        errors,
        notes: vec![
            "bonus values are negative ELBOs with the Gaussian normalizing constant omitted; the constant shifts every bonus equally".into(),
            "final_return is the mean of the aggregate curve over its last tenth; auc is its sum".into(),
        ],
    };
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join(CURVES_FILE), csv.as_bytes())?;
    write_file(&out.join(TRAJECTORIES_FILE), traj.as_bytes())?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
