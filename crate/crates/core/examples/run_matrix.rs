//! Train a tiny bonus-mode matrix on a pre-trained encoder and aggregate it.
//! Run `pretrain_latent` with the same output directory first.
//!
//! cargo run --release --example run_matrix -- [out_dir]

use latent_explore::harness::{report, run_matrix, ExperimentConfig, REPORT_DIR};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("latent-explore-pretrain").display().to_string());
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "out_dir": {out:?},
            "eval_tasks": 2,
            "seeds_per_task": 2,
            "modes": ["latent", "state", "none"],
            "regressor": {{ "trunk_hidden": [64] }},
            "vae": {{ "hidden": [32, 32], "epochs_per_iter": 10 }},
            "trpo": {{ "iterations": 15, "episodes_per_iter": 10 }}
        }}"#
    ))?;

    let cells = run_matrix(&cfg)?;
    for c in &cells {
        println!("{:<40} final {:.5} auc {:.5}", c.dir.display(), c.record.final_return, c.record.auc);
    }
    let summary = report(&cfg.out_dir, &cfg.out_dir.join(REPORT_DIR))?;
    for (mode, s) in &summary.modes {
        println!("{mode:>7}: final {:.5}, auc {:.5}", s.final_return, s.auc);
    }
    Ok(())
}
