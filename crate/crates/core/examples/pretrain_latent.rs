//! Collect scripted prior-task data, train the multi-head reward regressor and
//! report how well its latent space encodes the object of interest.
//!
//! cargo run --release --example pretrain_latent -- [out_dir]

use latent_explore::harness::{collect_prior, pretrain, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("latent-explore-pretrain").display().to_string());
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "out_dir": {out:?},
            "prior_tasks": 6,
            "eval_tasks": 3,
            "collect": {{ "iterations": 5, "episodes_per_iter": 10 }},
            "regressor": {{ "trunk_hidden": [64], "epochs": 60 }},
            "probe": {{ "states_per_task": 300 }}
        }}"#
    ))?;

    let collected = collect_prior(&cfg)?;
    for t in &collected.tasks {
        println!("prior task {}: {} rows, {} with reward", t.task_id, t.rows, t.positive_rows);
    }
    let (_, report) = pretrain(&cfg)?;
    println!("per-head mse: {:?}", report.head_mse);
    println!("probe R^2 for o0:          {:.3}", report.probe_r2);
    println!("probe R^2 for distractor:  {:.3}", report.distractor_r2);
    println!("artifacts under {out}");
    Ok(())
}
