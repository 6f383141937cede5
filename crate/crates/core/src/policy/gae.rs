use super::{mean_std, Result, TrajectoryBatch, ValueFn};

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// Advantages normalized to zero mean and unit variance over the batch.
    pub advantages: Vec<f64>,
    /// Advantages before normalization.
    pub raw: Vec<f64>,
    /// `raw + V(s_t)`, the regression targets of the value function.
    pub value_targets: Vec<f64>,
}

/// Generalized advantage estimation on the batch's augmented rewards, with the
/// value of each episode's final state used as bootstrap.
pub fn gae_advantages(batch: &TrajectoryBatch, valuefn: &ValueFn, discount: f64, lambda: f64) -> Result<Advantages> {
    let values = valuefn.predict(batch.states.view())?;
    let final_values = valuefn.predict(batch.final_states.view())?;
    Ok(gae_from_values(
        &batch.augmented_rewards,
        &values,
        &final_values,
        batch.horizon,
        discount,
        lambda,
    ))
}

/// Backward recursion `A_t = delta_t + discount * lambda * A_{t+1}` per episode.
/// `rewards` and `values` are episode-major with `horizon` steps per episode.
pub fn gae_from_values(
    rewards: &[f64],
    values: &[f64],
    final_values: &[f64],
    horizon: usize,
    discount: f64,
    lambda: f64,
) -> Advantages {
    let mut raw = vec![0.0; rewards.len()];
    for (e, ((adv, rew), val)) in raw
        .chunks_mut(horizon)
        .zip(rewards.chunks(horizon))
        .zip(values.chunks(horizon))
        .enumerate()
    {
        let mut next_value = final_values[e];
        let mut acc = 0.0;
        for t in (0..horizon).rev() {
            let delta = rew[t] + discount * next_value - val[t];
            acc = delta + discount * lambda * acc;
            adv[t] = acc;
            next_value = val[t];
        }
    }
    let value_targets = raw.iter().zip(values).map(|(a, v)| a + v).collect();
    let (mean, std) = mean_std(&raw);
    let advantages = raw
        .iter()
        .map(|a| if std > 1e-12 { (a - mean) / std } else { a - mean })
        .collect();
    Advantages {
        advantages,
        raw,
        value_targets,
    }
}
