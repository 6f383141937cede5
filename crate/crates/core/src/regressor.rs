//! Multi-head reward regression with a low-dimensional shared trunk.
//!
//! The trunk maps a state to a bottleneck vector `z`; one head per prior task
//! maps `z` to that task's reward. After training, the trunk alone is exported
//! as a frozen [`LatentEncoder`].

use crate::diffnet::checkpoint::{Bundle, Entry};
use crate::diffnet::{backward_tape, Activation, Adam, Mlp, NetError, NetSpec};
use crate::rng::{derive_seed, rng_from, stream};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RegressorError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} on head {head}")]
    Diverged { epoch: usize, head: usize },
    #[error("probe needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, RegressorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    /// Bottleneck width `p`.
    pub latent_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of each minibatch drawn from rows with positive reward.
    pub positive_fraction: f64,
    /// Refuse datasets where some task has no positive-reward row.
    pub require_positive_rows: bool,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            trunk_hidden: vec![64, 64],
            head_hidden: vec![32],
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            positive_fraction: 0.25,
            require_positive_rows: true,
            seed: 0,
        }
    }
}

/// States and rewards experienced on one prior task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: usize,
    pub states: Array2<f64>,
    pub rewards: Vec<f64>,
}

impl TaskData {
    pub fn positive_rows(&self) -> usize {
        self.rewards.iter().filter(|&&r| r > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorTaskDataset {
    pub tasks: Vec<TaskData>,
}

impl PriorTaskDataset {
    pub fn state_dim(&self) -> Option<usize> {
        self.tasks.first().map(|t| t.states.ncols())
    }

    pub fn validate(&self, require_positive_rows: bool) -> Result<()> {
        let bad = |m: String| Err(RegressorError::InvalidDataset(m));
        let Some(dim) = self.state_dim() else {
            return bad("no tasks".into());
        };
        for t in &self.tasks {
            if t.states.nrows() != t.rewards.len() {
                return bad(format!(
                    "task {}: {} states but {} rewards",
                    t.task_id,
                    t.states.nrows(),
                    t.rewards.len()
                ));
            }
            if t.states.nrows() == 0 {
                return bad(format!("task {} is empty", t.task_id));
            }
            if t.states.ncols() != dim {
                return bad(format!("task {} has state width {}", t.task_id, t.states.ncols()));
            }
            if t.states.iter().chain(&t.rewards).any(|v| !v.is_finite()) {
                return bad(format!("task {} has non-finite values", t.task_id));
            }
            if require_positive_rows && t.positive_rows() == 0 {
                return bad(format!("task {} has no positive-reward row", t.task_id));
            }
        }
        Ok(())
    }
}

/// Shared trunk with one regression head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    pub trunk: Mlp,
    pub heads: Vec<Mlp>,
    /// Heads regress `reward * reward_scale`.
    pub reward_scale: f64,
}

impl MultiHeadNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, num_heads: usize, cfg: &RegressorConfig, rng: &mut R) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.latent_dim >= state_dim {
            return Err(RegressorError::InvalidConfig(format!(
                "bottleneck width {} must be in 1..{}",
                cfg.latent_dim, state_dim
            )));
        }
        let trunk = Mlp::init(
            NetSpec::mlp(state_dim, &cfg.trunk_hidden, cfg.latent_dim, Activation::Tanh)?,
            rng,
        );
        let head_spec = NetSpec::mlp(cfg.latent_dim, &cfg.head_hidden, 1, Activation::Tanh)?;
        let heads = (0..num_heads).map(|_| Mlp::init(head_spec.clone(), rng)).collect();
        Ok(Self {
            trunk,
            heads,
            reward_scale: 1.0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.spec.output_dim()
    }

    /// Predicted rewards of head `head` for each state row.
    pub fn predict(&self, head: usize, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let z = self.trunk.forward_batch(states)?;
        let y = self.heads[head].forward_batch(z.view())?;
        Ok(y.iter().map(|v| v / self.reward_scale).collect())
    }

    /// Gradients of head `head`'s batch MSE (in scaled units) with respect to
    /// the trunk and that head.
    pub fn head_loss_grad(
        &self,
        head: usize,
        states: ArrayView2<'_, f64>,
        scaled_targets: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = states.nrows();
        let trunk_tape = self.trunk.tape(states)?;
        let h = &self.heads[head];
        let head_tape = h.tape(trunk_tape.output().view())?;
        let pred = head_tape.output();
        let mut d_out = Array2::<f64>::zeros((n, 1));
        let mut loss = 0.0;
        for r in 0..n {
            let e = pred[[r, 0]] - scaled_targets[r];
            loss += e * e;
            d_out[[r, 0]] = 2.0 * e / n as f64;
        }
        let (g_head, d_z) = backward_tape(&h.spec, &h.params, &head_tape, d_out.view())?;
        let (g_trunk, _) = backward_tape(&self.trunk.spec, &self.trunk.params, &trunk_tape, d_z.view())?;
        Ok((loss / n as f64, g_trunk.values, g_head.values))
    }

    pub fn encoder(&self) -> LatentEncoder {
        LatentEncoder {
            trunk: self.trunk.clone(),
        }
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut entries = vec![Entry::net("trunk", &self.trunk.spec, &self.trunk.params.values)];
        for (i, h) in self.heads.iter().enumerate() {
            entries.push(Entry::net(format!("head_{i}"), &h.spec, &h.params.values));
        }
        Bundle::new(
            entries,
            serde_json::json!({
                "kind": "multihead",
                "latent_dim": self.latent_dim(),
                "num_heads": self.heads.len(),
                "reward_scale": self.reward_scale,
            }),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_bundle().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle = Bundle::load(path)?;
        let num_heads = bundle.meta["num_heads"]
            .as_u64()
            .ok_or_else(|| RegressorError::Checkpoint("missing num_heads".into()))? as usize;
        let reward_scale = bundle.meta["reward_scale"].as_f64().unwrap_or(1.0);
        let trunk = mlp_entry(&bundle, "trunk")?;
        let heads = (0..num_heads)
            .map(|i| mlp_entry(&bundle, &format!("head_{i}")))
            .collect::<Result<_>>()?;
        Ok(Self {
            trunk,
            heads,
            reward_scale,
        })
    }
}

fn mlp_entry(bundle: &Bundle, name: &str) -> Result<Mlp> {
    let e = bundle.get(name)?;
    let spec = e
        .spec
        .clone()
        .ok_or_else(|| RegressorError::Checkpoint(format!("entry `{name}` has no spec")))?;
    let params = crate::diffnet::ParamVector::from_values(&spec, e.values.clone())?;
    Ok(Mlp::new(spec, params)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Final MSE of each head over its full task data, in reward units.
    pub head_mse: Vec<f64>,
    /// Mean minibatch loss per epoch (rows) and head (columns), scaled units.
    pub history: Vec<Vec<f64>>,
    pub reward_scale: f64,
}

/// Trains trunk and heads by interleaving per-task minibatch Adam steps.
/// A step on task `i` touches only the trunk and head `i`.
pub fn train_multihead(data: &PriorTaskDataset, cfg: &RegressorConfig) -> Result<(MultiHeadNet, TrainReport)> {
    data.validate(cfg.require_positive_rows)?;
    if data.tasks.len() < 2 {
        return Err(RegressorError::InvalidDataset(format!(
            "need at least 2 tasks, got {}",
            data.tasks.len()
        )));
    }
    if cfg.batch_size == 0 || !(0.0..=1.0).contains(&cfg.positive_fraction) {
        return Err(RegressorError::InvalidConfig("bad batch size or positive fraction".into()));
    }
    let n_tasks = data.tasks.len();
    let mut init_rng = rng_from(derive_seed(cfg.seed, &[stream::REGRESSOR, 0]));
    let mut net = MultiHeadNet::new(data.state_dim().unwrap(), n_tasks, cfg, &mut init_rng)?;
    let max_abs = data
        .tasks
        .iter()
        .flat_map(|t| t.rewards.iter())
        .fold(0.0f64, |m, r| m.max(r.abs()));
    net.reward_scale = if max_abs > 0.0 { 1.0 / max_abs } else { 1.0 };

    let mut trunk_opt = Adam::new(net.trunk.num_params(), cfg.lr);
    let mut head_opts: Vec<Adam> = net.heads.iter().map(|h| Adam::new(h.num_params(), cfg.lr)).collect();

    let split: Vec<(Vec<usize>, Vec<usize>)> = data
        .tasks
        .iter()
        .map(|t| (0..t.rewards.len()).partition(|&r| t.rewards[r] > 0.0))
        .collect();
    let batches: Vec<usize> = data
        .tasks
        .iter()
        .map(|t| t.rewards.len().div_ceil(cfg.batch_size))
        .collect();
    let max_batches = *batches.iter().max().unwrap();
    let n_pos = ((cfg.batch_size as f64) * cfg.positive_fraction).round() as usize;

    let mut rng = rng_from(derive_seed(cfg.seed, &[stream::REGRESSOR, 1]));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let mut targets = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut sums = vec![0.0; n_tasks];
        for b in 0..max_batches {
            for (i, task) in data.tasks.iter().enumerate() {
                if b >= batches[i] {
                    continue;
                }
                let (pos, zero) = &split[i];
                idx.clear();
                let take_pos = if pos.is_empty() {
                    0
                } else if zero.is_empty() {
                    cfg.batch_size
                } else {
                    n_pos
                };
                for k in 0..cfg.batch_size {
                    let pool = if k < take_pos { pos } else { zero };
                    idx.push(pool[rng.random_range(0..pool.len())]);
                }
                let states = task.states.select(Axis(0), &idx);
                targets.clear();
                targets.extend(idx.iter().map(|&r| task.rewards[r] * net.reward_scale));
                let (loss, g_trunk, g_head) = net.head_loss_grad(i, states.view(), &targets)?;
                if !loss.is_finite() {
                    return Err(RegressorError::Diverged { epoch, head: i });
                }
                trunk_opt.step(&mut net.trunk.params.values, &g_trunk)?;
                head_opts[i].step(&mut net.heads[i].params.values, &g_head)?;
                sums[i] += loss;
            }
        }
        history.push(sums.iter().zip(&batches).map(|(s, &b)| s / b as f64).collect());
    }

    let head_mse = data
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pred = net.predict(i, t.states.view())?;
            Ok(pred.iter().zip(&t.rewards).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / t.rewards.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    if head_mse.iter().any(|m| !m.is_finite()) {
        return Err(RegressorError::Diverged {
            epoch: cfg.epochs,
            head: head_mse.iter().position(|m| !m.is_finite()).unwrap(),
        });
    }
    let report = TrainReport {
        head_mse,
        history,
        reward_scale: net.reward_scale,
    };
    Ok((net, report))
}

/// The frozen trunk of a trained [`MultiHeadNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEncoder {
    trunk: Mlp,
}

impl LatentEncoder {
    pub fn from_trunk(trunk: Mlp) -> Self {
        Self { trunk }
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.spec.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.spec.input_dim()
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn encode(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trunk.forward(state)?)
    }

    pub fn encode_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.trunk.forward_batch(states)?)
    }

    /// Loads the trunk of a multi-head checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let bundle = Bundle::load(path)?;
        Ok(Self {
            trunk: mlp_entry(&bundle, "trunk")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Coefficient of determination per target column.
    pub r2: Vec<f64>,
    /// Set when the normal equations were singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

impl ProbeResult {
    pub fn mean_r2(&self) -> f64 {
        self.r2.iter().sum::<f64>() / self.r2.len().max(1) as f64
    }
}

/// Ordinary least squares (with intercept) from `features` to each target
/// column, solved through the normal equations.
pub fn probe_linear(features: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<ProbeResult> {
    let n = features.nrows();
    let p = features.ncols();
    if n < p + 1 {
        return Err(RegressorError::TooFewRows { needed: p + 1, got: n });
    }
    if targets.nrows() != n {
        return Err(RegressorError::InvalidDataset("probe targets row count differs".into()));
    }
    let x = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { features[[r, c - 1]] });
    let xtx = x.transpose() * &x;
    let chol = xtx.clone().cholesky().filter(|c| {
        let d = c.l_dirty().diagonal();
        let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        d.iter().all(|v| v.abs() > 1e-7 * max)
    });
    let pinv = if chol.is_none() {
        Some(
            xtx.clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| RegressorError::InvalidDataset(e.to_string()))?,
        )
    } else {
        None
    };
    let mut r2 = Vec::with_capacity(targets.ncols());
    for col in targets.axis_iter(Axis(1)) {
        let y = DVector::from_iterator(n, col.iter().copied());
        let xty = x.transpose() * &y;
        let beta = match (&chol, &pinv) {
            (Some(c), _) => c.solve(&xty),
            (None, Some(pi)) => pi * xty,
            _ => unreachable!(),
        };
        let fitted = &x * beta;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        r2.push(if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res <= 1e-24 {
            1.0
        } else {
            0.0
        });
    }
    Ok(ProbeResult {
        r2,
        pseudo_inverse: pinv.is_some(),
    })
}

/// Linear probe from the encoder's latent to `targets`.
pub fn probe_latent(enc: &LatentEncoder, states: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<ProbeResult> {
    let z = enc.encode_batch(states)?;
    probe_linear(z.view(), targets)
}
