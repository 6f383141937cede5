use clap::{Parser, Subcommand};
use latent_explore::harness::{self, matrix, ExperimentConfig, HarnessError, RunStatus};
use latent_explore::policy::BonusMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(version, about = "Latent-space exploration bonuses on the pusher task family")]
struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of runs trained concurrently.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate prior-task transitions.
    Collect,
    /// Train the multi-head reward regressor on the collected data.
    Pretrain,
    /// Train every seed of one evaluation task with one bonus mode.
    Train {
        #[arg(long)]
        bonus: BonusMode,
        /// Index of the evaluation task.
        #[arg(long)]
        task_seed: usize,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Train all configured modes on all evaluation tasks.
    Matrix,
    /// Bonus-only training followed by coverage statistics.
    PureExplore {
        #[arg(long, value_parser = pure_mode)]
        bonus: Option<BonusMode>,
    },
    /// Aggregate run directories into curves and a summary.
    Report {
        /// Directory to scan; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn pure_mode(s: &str) -> Result<BonusMode, String> {
    match s.parse()? {
        m @ (BonusMode::Oracle | BonusMode::Latent | BonusMode::State) => Ok(m),
        m => Err(format!("pure exploration supports oracle, latent and state, not {m}")),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn failed_runs(cells: &[matrix::CellOutcome]) -> Result<(), HarnessError> {
    let failed: Vec<String> = cells
        .iter()
        .filter(|c| c.record.status == RunStatus::Failed)
        .map(|c| format!("{}: {}", c.dir.display(), c.record.error.clone().unwrap_or_default()))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Run(format!("{} run(s) failed:\n{}", failed.len(), failed.join("\n"))))
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Collect => {
            let out = harness::collect_prior(&cfg)?;
            for t in &out.tasks {
                println!(
                    "task {}: {} rows, {} positive, {} resampled",
                    t.task_id, t.rows, t.positive_rows, t.resampled
                );
            }
        }
        Cmd::Pretrain => {
            let (_, report) = harness::pretrain(&cfg)?;
            println!("head mse: {:?}", report.head_mse);
            println!(
                "probe r2 o0: {:.4}, distractor o{}: {:.4}",
                report.probe_r2, report.distractor, report.distractor_r2
            );
        }
        Cmd::Train {
            bonus,
            task_seed,
            resume,
        } => {
            if task_seed >= cfg.eval_tasks {
                return Err(HarnessError::Config(format!(
                    "--task-seed {task_seed} outside 0..{}",
                    cfg.eval_tasks
                )));
            }
            let cells = matrix::train_task(&cfg, bonus, task_seed, resume)?;
            for c in &cells {
                println!("{}: final return {:.6}", c.dir.display(), c.record.final_return);
            }
            failed_runs(&cells)?;
        }
        Cmd::Matrix => {
            let cells = harness::run_matrix(&cfg)?;
            println!("{} runs written under {}", cells.len(), cfg.out_dir.display());
            failed_runs(&cells)?;
        }
        Cmd::PureExplore { bonus } => {
            if let Some(m) = bonus {
                cfg.pure.modes = vec![m];
            }
            for s in harness::pure_exploration(&cfg)? {
                println!(
                    "{}: moved fraction {:.3}, occupancy entropy {:.3}",
                    s.mode, s.moved_fraction, s.occupancy_entropy
                );
            }
        }
        Cmd::Report { input } => {
            let input = input.unwrap_or_else(|| cfg.out_dir.clone());
            let out = cfg.out_dir.join(harness::REPORT_DIR);
            let summary = harness::report(&input, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary.modes).expect("serializable"));
            for e in &summary.errors {
                eprintln!("{}: {}", e.path.display(), e.message);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
