//! Train one policy on one pusher task with a density bonus and print the
//! return curve.
//!
//! cargo run --release --example trpo_explore -- [oracle|state|action|none] [iterations] [task_seed]

use latent_explore::env::{sample_task, EnvConfig};
use latent_explore::policy::{explore_loop, BonusMode, ExploreConfig, ExploreOptions, TrpoConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode: BonusMode = args.first().map_or(Ok(BonusMode::Oracle), |s| s.parse())?;
    let iterations = args.get(1).map_or(Ok(50), |s| s.parse())?;
    let task_seed = args.get(2).map_or(Ok(1), |s| s.parse())?;

    let cfg = ExploreConfig {
        trpo: TrpoConfig {
            bonus_mode: mode,
            iterations,
            ..TrpoConfig::default()
        },
        ..ExploreConfig::default()
    };
    let task = sample_task(task_seed, &EnvConfig::default())?;
    let out = explore_loop(&task, &cfg, None, 0, ExploreOptions::default())?;
    println!("iter  mean_return  mean_bonus  kl        accepted  ms");
    for m in &out.metrics {
        println!(
            "{:4}  {:11.6}  {:10.4}  {:.6}  {:8}  {}",
            m.iter, m.mean_return, m.mean_bonus, m.kl, m.step_accepted, m.wall_ms
        );
    }
    Ok(())
}
