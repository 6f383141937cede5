//! The exploration loop: collect on-policy rollouts, add the density bonus
//! scored by the VAE from the previous iteration, take a TRPO step, then refit
//! the VAE on the features just visited.

use super::bonus::batch_features;
use super::gae::gae_advantages;
use super::trpo::trpo_update;
use super::{augment, mean_std, BonusMode, GaussianPolicy, PolicyError, Result, TrajectoryBatch, TrpoConfig, ValueFn};
use crate::diffnet::checkpoint::{Bundle, Entry};
use crate::diffnet::{Adam, Mlp, ParamVector};
use crate::env::{rollout_batch, EnvConfig, TaskSpec, ACTION_DIM, STATE_DIM};
use crate::regressor::LatentEncoder;
use crate::rng::{derive_seed, rng_from, stream};
use crate::vae::{Vae, VaeConfig, VaeTrainer};
use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    pub env: EnvConfig,
    pub trpo: TrpoConfig,
    pub vae: VaeConfig,
}

/// One row of the per-iteration metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_env_reward: f64,
    pub mean_bonus: f64,
    pub min_bonus: f64,
    pub max_bonus: f64,
    pub kl: f64,
    pub step_accepted: bool,
    pub wall_ms: u64,
    pub cg_residual: f64,
    pub vae_loss: f64,
    /// Fingerprint of the VAE that scored this iteration's bonuses.
    pub vae_used: u64,
    /// Fingerprint of the VAE after this iteration's refit.
    pub vae_after: u64,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub metrics: Vec<IterationMetrics>,
    pub policy: GaussianPolicy,
    pub valuefn: ValueFn,
    pub vae: Option<Vae>,
}

/// Receives every iteration's augmented batch.
pub type BatchSink<'a> = dyn FnMut(usize, &TrajectoryBatch) -> std::io::Result<()> + 'a;

#[derive(Default)]
pub struct ExploreOptions<'a> {
    /// Directory receiving `metrics.csv` and checkpoints.
    pub out_dir: Option<&'a Path>,
    /// Continue from `out_dir/checkpoint.ckpt` when it exists.
    pub resume: bool,
    /// Called with every iteration's augmented batch.
    pub on_batch: Option<&'a mut BatchSink<'a>>,
}

#[derive(Clone)]
struct LoopState {
    next_iter: usize,
    policy: GaussianPolicy,
    valuefn: ValueFn,
    value_opt: Adam,
    vae: Option<VaeTrainer>,
    vae_data: Option<Array2<f64>>,
    metrics: Vec<IterationMetrics>,
}

impl LoopState {
    fn fresh(cfg: &ExploreConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        let t = &cfg.trpo;
        let policy = GaussianPolicy::new(
            STATE_DIM,
            ACTION_DIM,
            &t.policy_hidden,
            t.init_log_std,
            &mut rng_from(derive_seed(seed, &[stream::POLICY_INIT])),
        )?;
        let valuefn = ValueFn::new(STATE_DIM, &t.value_hidden, &mut rng_from(derive_seed(seed, &[stream::VALUE_INIT])))?;
        let value_opt = Adam::new(valuefn.net.num_params(), t.value_lr);
        let vae = if t.bonus_mode == BonusMode::None {
            None
        } else {
            let vae = Vae::new(feature_dim, &cfg.vae, &mut rng_from(derive_seed(seed, &[stream::VAE_INIT])))?;
            Some(VaeTrainer::new(vae, &cfg.vae))
        };
        Ok(Self {
            next_iter: 1,
            policy,
            valuefn,
            value_opt,
            vae,
            vae_data: None,
            metrics: Vec::new(),
        })
    }

    fn to_bundle(&self) -> Bundle {
        let mut entries = vec![
            Entry::net("policy_mean", &self.policy.mean_net.spec, &self.policy.mean_net.params.values),
            Entry::vector("policy_log_std", self.policy.log_std()),
            Entry::net("value", &self.valuefn.net.spec, &self.valuefn.net.params.values),
            Entry::vector("value_adam_m", &self.value_opt.m),
            Entry::vector("value_adam_v", &self.value_opt.v),
        ];
        let mut meta = serde_json::json!({
            "kind": "explore",
            "next_iter": self.next_iter,
            "value_adam_t": self.value_opt.t,
            "metrics": self.metrics,
        });
        if let Some(tr) = &self.vae {
            entries.push(Entry::net("vae_encoder", &tr.vae.encoder.spec, &tr.vae.encoder.params.values));
            entries.push(Entry::net("vae_decoder", &tr.vae.decoder.spec, &tr.vae.decoder.params.values));
            entries.push(Entry::vector("vae_enc_adam_m", &tr.enc_opt.m));
            entries.push(Entry::vector("vae_enc_adam_v", &tr.enc_opt.v));
            entries.push(Entry::vector("vae_dec_adam_m", &tr.dec_opt.m));
            entries.push(Entry::vector("vae_dec_adam_v", &tr.dec_opt.v));
            meta["vae_enc_adam_t"] = tr.enc_opt.t.into();
            meta["vae_dec_adam_t"] = tr.dec_opt.t.into();
        }
        if let Some(d) = &self.vae_data {
            entries.push(Entry::vector("vae_data", d.as_slice().unwrap()));
            meta["vae_data_cols"] = d.ncols().into();
        }
        Bundle::new(entries, meta)
    }

    fn from_bundle(b: &Bundle, cfg: &ExploreConfig) -> Result<Self> {
        let bad = |m: &str| PolicyError::InvalidConfig(format!("checkpoint: {m}"));
        let net = |name: &str| -> Result<Mlp> {
            let e = b.get(name)?;
            let spec = e.spec.clone().ok_or_else(|| bad("entry without spec"))?;
            Ok(Mlp::new(spec.clone(), ParamVector::from_values(&spec, e.values.clone())?)?)
        };
        let vec = |name: &str| -> Result<Vec<f64>> { Ok(b.get(name)?.values.clone()) };
        let t_of = |key: &str| b.meta[key].as_u64().ok_or_else(|| bad(key));
        let policy = GaussianPolicy::from_parts(net("policy_mean")?, vec("policy_log_std")?)?;
        let valuefn = ValueFn { net: net("value")? };
        let mut value_opt = Adam::new(valuefn.net.num_params(), cfg.trpo.value_lr);
        value_opt.m = vec("value_adam_m")?;
        value_opt.v = vec("value_adam_v")?;
        value_opt.t = t_of("value_adam_t")?;
        let vae = if b.get("vae_encoder").is_ok() {
            let v = Vae::from_parts(net("vae_encoder")?, net("vae_decoder")?)?;
            let mut tr = VaeTrainer::new(v, &cfg.vae);
            tr.enc_opt.m = vec("vae_enc_adam_m")?;
            tr.enc_opt.v = vec("vae_enc_adam_v")?;
            tr.enc_opt.t = t_of("vae_enc_adam_t")?;
            tr.dec_opt.m = vec("vae_dec_adam_m")?;
            tr.dec_opt.v = vec("vae_dec_adam_v")?;
            tr.dec_opt.t = t_of("vae_dec_adam_t")?;
            Some(tr)
        } else {
            None
        };
        let vae_data = match b.get("vae_data") {
            Ok(e) => {
                let cols = t_of("vae_data_cols")? as usize;
                Some(Array2::from_shape_vec((e.values.len() / cols, cols), e.values.clone()).map_err(|_| bad("vae_data shape"))?)
            }
            Err(_) => None,
        };
        let metrics: Vec<IterationMetrics> =
            serde_json::from_value(b.meta["metrics"].clone()).map_err(|e| bad(&e.to_string()))?;
        Ok(Self {
            next_iter: t_of("next_iter")? as usize,
            policy,
            valuefn,
            value_opt,
            vae,
            vae_data,
            metrics,
        })
    }
}

fn write_metrics_header(path: &Path) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    writeln!(
        f,
        "iter,mean_return,std_return,mean_env_reward,mean_bonus,min_bonus,max_bonus,kl,step_accepted,wall_ms"
    )
}

fn append_metrics_row(path: &Path, m: &IterationMetrics) -> std::io::Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{},{}",
        m.iter, m.mean_return, m.std_return, m.mean_env_reward, m.mean_bonus, m.min_bonus, m.max_bonus, m.kl, m.step_accepted, m.wall_ms
    )
}

/// Runs `cfg.trpo.iterations` exploration iterations on `task`.
///
/// The bonuses of iteration `t` are scored by the VAE as it stood at the end
/// of iteration `t - 1` (the freshly initialized one for `t = 1`). Every random
/// draw derives from `seed`, so equal inputs give bitwise-equal results.
pub fn explore_loop(
    task: &TaskSpec,
    cfg: &ExploreConfig,
    encoder: Option<&LatentEncoder>,
    seed: u64,
    mut opts: ExploreOptions<'_>,
) -> Result<ExploreOutcome> {
    let t = &cfg.trpo;
    t.validate()?;
    let mode = t.bonus_mode;
    if mode == BonusMode::Latent {
        let enc = encoder.ok_or(PolicyError::MissingEncoder)?;
        if enc.state_dim() != STATE_DIM {
            return Err(PolicyError::DimensionMismatch {
                what: "encoder input",
                expected: STATE_DIM,
                got: enc.state_dim(),
            });
        }
    }
    let feature_dim = mode.feature_dim(STATE_DIM, ACTION_DIM, encoder)?;

    let ckpt_path = opts.out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let metrics_path = opts.out_dir.map(|d| d.join(METRICS_FILE));
    if let Some(d) = opts.out_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut state = match &ckpt_path {
        Some(p) if opts.resume && p.exists() => LoopState::from_bundle(&Bundle::load(p)?, cfg)?,
        _ => LoopState::fresh(cfg, feature_dim, seed)?,
    };
    if let Some(p) = &metrics_path {
        write_metrics_header(p)?;
        for m in &state.metrics {
            append_metrics_row(p, m)?;
        }
    }

    while state.next_iter <= t.iterations {
        let snapshot = state.clone();
        match run_iteration(&mut state, task, cfg, encoder, seed, &mut opts) {
            Ok(m) => {
                if let Some(p) = &metrics_path {
                    append_metrics_row(p, &m)?;
                }
                state.metrics.push(m);
                state.next_iter += 1;
                if let Some(p) = &ckpt_path {
                    if t.checkpoint_every > 0 && (state.next_iter - 1) % t.checkpoint_every == 0 {
                        state.to_bundle().save(p)?;
                    }
                }
            }
            Err(e) => {
                if let Some(p) = &ckpt_path {
                    snapshot.to_bundle().save(p)?;
                }
                return Err(PolicyError::Aborted {
                    iteration: snapshot.next_iter,
                    reason: e.to_string(),
                });
            }
        }
    }
    if let Some(p) = &ckpt_path {
        if t.checkpoint_every > 0 {
            state.to_bundle().save(p)?;
        }
    }
    Ok(ExploreOutcome {
        metrics: state.metrics,
        policy: state.policy,
        valuefn: state.valuefn,
        vae: state.vae.map(|tr| tr.vae),
    })
}

fn run_iteration(
    state: &mut LoopState,
    task: &TaskSpec,
    cfg: &ExploreConfig,
    encoder: Option<&LatentEncoder>,
    seed: u64,
    opts: &mut ExploreOptions<'_>,
) -> Result<IterationMetrics> {
    let t = &cfg.trpo;
    let it = state.next_iter as u64;
    let start = Instant::now();

    let seeds: Vec<u64> = (0..t.episodes_per_iter as u64)
        .map(|e| derive_seed(seed, &[stream::ROLLOUT, it, e]))
        .collect();
    let trajs = rollout_batch(&state.policy, task, &cfg.env, t.horizon, &seeds)?;
    let mut batch = TrajectoryBatch::from_trajectories(&trajs, &state.policy, cfg.env.max_action)?;
    if t.zero_env_reward {
        batch.env_rewards.iter_mut().for_each(|r| *r = 0.0);
    }

    let features = batch_features(&batch, t.bonus_mode, encoder)?;
    let vae_used = state.vae.as_ref().map_or(0, |tr| tr.vae.fingerprint());
    augment(
        &mut batch,
        state.vae.as_ref().map(|tr| &tr.vae),
        features.as_ref().map(|f| f.view()),
        t.bonus_scale,
        derive_seed(seed, &[stream::BONUS, it]),
    )?;
    if let Some(cb) = opts.on_batch.as_mut() {
        cb(state.next_iter, &batch)?;
    }

    let adv = gae_advantages(&batch, &state.valuefn, t.discount, t.gae_lambda)?;
    let diag = trpo_update(
        &mut state.policy,
        &mut state.valuefn,
        &mut state.value_opt,
        &batch,
        &adv,
        t,
        derive_seed(seed, &[stream::VALUE_TRAIN, it]),
    )?;

    let mut vae_loss = 0.0;
    if let (Some(tr), Some(feats)) = (state.vae.as_mut(), features) {
        let data = if cfg.vae.train_on_all_data {
            let all = match state.vae_data.take() {
                Some(prev) => concatenate(Axis(0), &[prev.view(), feats.view()]).expect("equal widths"),
                None => feats,
            };
            state.vae_data = Some(all);
            state.vae_data.as_ref().unwrap().view()
        } else {
            state.vae_data = Some(feats);
            state.vae_data.as_ref().unwrap().view()
        };
        let trace = tr.train_epochs(data, cfg.vae.epochs_per_iter, derive_seed(seed, &[stream::VAE_TRAIN, it]))?;
        vae_loss = trace.last().copied().unwrap_or(0.0);
        if !cfg.vae.train_on_all_data {
            state.vae_data = None;
        }
    }

    let returns = batch.episode_returns(t.discount);
    let (mean_return, std_return) = mean_std(&returns);
    let (mean_bonus, _) = mean_std(&batch.bonuses);
    let mean_env_reward = batch.env_rewards.iter().sum::<f64>() / batch.len() as f64;
    Ok(IterationMetrics {
        iter: state.next_iter,
        mean_return,
        std_return,
        mean_env_reward,
        mean_bonus,
        min_bonus: batch.bonuses.iter().copied().fold(f64::INFINITY, f64::min),
        max_bonus: batch.bonuses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        kl: diag.kl,
        step_accepted: diag.step_accepted,
        wall_ms: start.elapsed().as_millis() as u64,
        cg_residual: diag.cg_residual,
        vae_loss,
        vae_used,
        vae_after: state.vae.as_ref().map_or(0, |tr| tr.vae.fingerprint()),
    })
}
