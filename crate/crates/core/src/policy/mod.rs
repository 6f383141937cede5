//! On-policy optimization with exploration bonuses.
//!
//! [`GaussianPolicy`] and [`ValueFn`] are trained by TRPO ([`trpo`]) on
//! rewards augmented with a VAE-estimated novelty bonus ([`bonus`]); the whole
//! collect / augment / update / refit cycle lives in [`explore`].

pub mod bonus;
pub mod cg;
pub mod explore;
pub mod gae;
pub mod trpo;

pub use bonus::{augment, bonus_features, BonusMode};
pub use cg::{cg_solve, CgResult};
pub use explore::{explore_loop, BatchSink, ExploreConfig, ExploreOptions, ExploreOutcome, IterationMetrics, CHECKPOINT_FILE, METRICS_FILE};
pub use gae::{gae_advantages, Advantages};
pub use trpo::{surrogate_and_kl, trpo_update, SurrogateEval, TrpoDiagnostics};

use crate::diffnet::{Activation, Mlp, NetError, NetSpec};
use crate::env::{EnvError, Trajectory};
use crate::regressor::RegressorError;
use crate::vae::VaeError;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Encoder(#[from] RegressorError),
    #[error("latent bonus mode requires an encoder")]
    MissingEncoder,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("iteration {iteration} aborted: {reason}")]
    Aborted { iteration: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// `ln(1e-3)`: the smallest allowed log standard deviation.
pub const LOG_STD_FLOOR: f64 = -6.907_755_278_982_137;

/// Diagonal Gaussian policy with a state-conditioned mean and a global log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Result<Self> {
        let spec = NetSpec::mlp(state_dim, hidden, action_dim, Activation::Tanh)?;
        let mut mean_net = Mlp::init(spec, rng);
        // small output layer so the initial mean is close to zero
        let last = *mean_net.spec.layout().last().unwrap();
        mean_net.params.values[last.weight_offset..last.bias_offset]
            .iter_mut()
            .for_each(|w| *w *= 0.01);
        Ok(Self {
            mean_net,
            log_std: vec![init_log_std.max(LOG_STD_FLOOR); action_dim],
        })
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>) -> Result<Self> {
        if log_std.len() != mean_net.spec.output_dim() {
            return Err(PolicyError::DimensionMismatch {
                what: "log_std",
                expected: mean_net.spec.output_dim(),
                got: log_std.len(),
            });
        }
        Ok(Self {
            mean_net,
            log_std: log_std.into_iter().map(|l| l.max(LOG_STD_FLOOR)).collect(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.spec.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn mean_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.mean_net.forward_batch(states)?)
    }

    /// Mean-network parameters followed by the log-std.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.mean_net.params.values.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    /// Sets parameters from a flat vector; the log-std is floored.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(PolicyError::DimensionMismatch {
                what: "policy parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let n = self.mean_net.num_params();
        self.mean_net.params.values.copy_from_slice(&flat[..n]);
        for (l, v) in self.log_std.iter_mut().zip(&flat[n..]) {
            *l = v.max(LOG_STD_FLOOR);
        }
        Ok(())
    }

    /// Log-density of each action row given the matching state row.
    pub fn log_prob_batch(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let means = self.mean_batch(states)?;
        Ok(gaussian_log_probs(means.view(), &self.log_std, actions))
    }
}

pub(crate) fn gaussian_log_probs(means: ArrayView2<'_, f64>, log_std: &[f64], actions: ArrayView2<'_, f64>) -> Vec<f64> {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    means
        .rows()
        .into_iter()
        .zip(actions.rows())
        .map(|(m, a)| {
            m.iter()
                .zip(a.iter())
                .zip(log_std)
                .map(|((mu, x), ls)| {
                    let z = (x - mu) * (-ls).exp();
                    -0.5 * z * z - ls - half_log_2pi
                })
                .sum()
        })
        .collect()
}

/// State-value baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn {
    pub net: Mlp,
}

impl ValueFn {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::init(NetSpec::mlp(state_dim, hidden, 1, Activation::Tanh)?, rng),
        })
    }

    pub fn predict(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(states)?.into_raw_vec_and_offset().0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    pub kl_limit: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_ratio: f64,
    pub backtrack_steps: usize,
    /// Discount of the return and of the advantage estimator.
    pub discount: f64,
    pub gae_lambda: f64,
    /// Weight of the exploration bonus in the augmented reward.
    pub bonus_scale: f64,
    pub bonus_mode: BonusMode,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub horizon: usize,
    pub policy_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub value_hidden: Vec<usize>,
    pub value_lr: f64,
    pub value_epochs: usize,
    pub value_batch_size: usize,
    /// Replace the environment reward by zero (bonus-only training).
    pub zero_env_reward: bool,
    /// Write a resumable checkpoint every `k` iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            kl_limit: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_ratio: 0.8,
            backtrack_steps: 10,
            discount: 0.99,
            gae_lambda: 0.97,
            bonus_scale: 0.1,
            bonus_mode: BonusMode::Latent,
            iterations: 300,
            episodes_per_iter: 20,
            horizon: 50,
            policy_hidden: vec![32, 32],
            init_log_std: 0.5f64.ln(),
            value_hidden: vec![32, 32],
            value_lr: 1e-3,
            value_epochs: 5,
            value_batch_size: 64,
            zero_env_reward: false,
            checkpoint_every: 0,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.kl_limit.is_nan() || self.kl_limit <= 0.0 {
            return bad("kl_limit must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return bad("backtrack_ratio must lie in (0, 1)");
        }
        if self.horizon == 0 || self.episodes_per_iter == 0 {
            return bad("horizon and episodes_per_iter must be positive");
        }
        if !self.bonus_scale.is_finite() {
            return bad("bonus_scale must be finite");
        }
        Ok(())
    }
}

/// Rollouts of one iteration, flattened episode-major (`row = episode * horizon + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub episodes: usize,
    pub horizon: usize,
    pub states: Array2<f64>,
    /// State reached after the last step of each episode.
    pub final_states: Array2<f64>,
    /// Sampled actions, as scored by the policy.
    pub actions: Array2<f64>,
    /// Actions after the environment's clamping.
    pub executed_actions: Array2<f64>,
    pub env_rewards: Vec<f64>,
    pub bonuses: Vec<f64>,
    pub augmented_rewards: Vec<f64>,
    /// Log-probabilities of `actions` under the behaviour policy.
    pub log_probs: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_trajectories(trajs: &[Trajectory], policy: &GaussianPolicy, max_action: f64) -> Result<Self> {
        let episodes = trajs.len();
        let horizon = trajs.first().map_or(0, |t| t.len());
        if episodes == 0 || horizon == 0 || trajs.iter().any(|t| t.len() != horizon) {
            return Err(PolicyError::InvalidConfig("episodes must be non-empty with equal length".into()));
        }
        let n = trajs[0].states[0].len();
        let m = trajs[0].actions[0].len();
        let rows = episodes * horizon;
        let states = Array2::from_shape_fn((rows, n), |(r, c)| trajs[r / horizon].states[r % horizon][c]);
        let final_states = Array2::from_shape_fn((episodes, n), |(e, c)| trajs[e].final_state[c]);
        let actions = Array2::from_shape_fn((rows, m), |(r, c)| trajs[r / horizon].actions[r % horizon][c]);
        let executed_actions = actions.mapv(|a| a.clamp(-max_action, max_action));
        let env_rewards: Vec<f64> = trajs.iter().flat_map(|t| t.rewards.iter().copied()).collect();
        let log_probs = policy.log_prob_batch(states.view(), actions.view())?;
        Ok(Self {
            episodes,
            horizon,
            states,
            final_states,
            actions,
            executed_actions,
            bonuses: vec![0.0; rows],
            augmented_rewards: env_rewards.clone(),
            env_rewards,
            log_probs,
        })
    }

    pub fn len(&self) -> usize {
        self.env_rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.env_rewards.is_empty()
    }

    /// Discounted environment return of every episode.
    pub fn episode_returns(&self, discount: f64) -> Vec<f64> {
        self.env_rewards
            .chunks(self.horizon)
            .map(|ep| {
                let mut g = 0.0;
                let mut w = 1.0;
                for r in ep {
                    g += w * r;
                    w *= discount;
                }
                g
            })
            .collect()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
