//! Train with the bonus alone and measure how often the object gets moved and
//! how evenly the pusher covers the board.
//!
//! cargo run --release --example pure_exploration -- [out_dir]

use latent_explore::harness::{pure_exploration, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("latent-explore-pure").display().to_string());
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "out_dir": {out:?},
            "vae": {{ "hidden": [32, 32], "epochs_per_iter": 10 }},
            "trpo": {{ "iterations": 20, "episodes_per_iter": 10 }},
            "pure": {{ "modes": ["oracle", "state"], "episodes": 50 }}
        }}"#
    ))?;
    for s in pure_exploration(&cfg)? {
        println!(
            "{:>7}: object moved in {:.0}% of episodes, occupancy entropy {:.3} nats",
            s.mode,
            100.0 * s.moved_fraction,
            s.occupancy_entropy
        );
    }
    Ok(())
}
