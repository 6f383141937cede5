//! Sample a pusher task and drive the object of interest to the goal with the
//! scripted controller used for prior-task data.
//!
//! cargo run --release --example pusher_rollout -- [task_seed]

use latent_explore::env::{reward, sample_task, Action, EnvConfig, PusherEnv};
use latent_explore::harness::scripted_action;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let cfg = EnvConfig::default();
    let task = sample_task(seed, &cfg)?;
    println!("object o0 at ({:.3}, {:.3}), goal at ({:.3}, {:.3})",
        task.object_init[0].x, task.object_init[0].y, task.goal.x, task.goal.y);

    let mut env = PusherEnv::new(&task, cfg.clone());
    let mut total = 0.0;
    for t in 0..cfg.horizon {
        let a = scripted_action(env.state(), &cfg);
        let res = env.step(Action::new(a[0], a[1]))?;
        total += res.reward;
        let s = &res.next_state;
        if t % 5 == 0 || res.reward > 0.0 {
            println!(
                "t={t:2} pusher=({:+.3},{:+.3}) o0=({:+.3},{:+.3}) d={:.3} r={:.5}",
                s.pusher.x, s.pusher.y, s.objects[0].x, s.objects[0].y,
                s.objects[0].dist(s.goal), res.reward
            );
        }
    }
    println!("episode return {total:.5} (reward inside the goal disk is d^2, d < {})", cfg.delta);
    println!("reward at the goal center: {}", reward(&{
        let mut s = task.initial_state();
        s.objects[0] = s.goal;
        s
    }, cfg.delta));
    Ok(())
}
