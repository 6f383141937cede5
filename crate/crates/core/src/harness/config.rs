use super::{HarnessError, Result};
use crate::env::EnvConfig;
use crate::policy::{BonusMode, ExploreConfig, TrpoConfig};
use crate::regressor::RegressorConfig;
use crate::vae::VaeConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where prior-task transitions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CollectSource {
    /// Push-to-goal controller mixed with uniform random episodes.
    #[default]
    Scripted,
    /// TRPO with the oracle bonus; every visited transition is kept.
    TrpoOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub source: CollectSource,
    /// Training iterations per prior task; rows = iterations * episodes * horizon.
    pub iterations: usize,
    pub episodes_per_iter: usize,
    /// Share of scripted episodes driven by the controller.
    pub controller_fraction: f64,
    /// Gaussian action noise of the controller, as a fraction of the action limit.
    pub controller_noise: f64,
    /// Resampling budget for tasks without any positive-reward row.
    pub max_resample: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            source: CollectSource::Scripted,
            iterations: 10,
            episodes_per_iter: 20,
            controller_fraction: 0.5,
            controller_noise: 0.3,
            max_resample: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Random states per evaluation task; all bodies uniform, goal fixed.
    pub states_per_task: usize,
    /// Index of the distractor object.
    pub distractor: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            states_per_task: 500,
            distractor: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PureConfig {
    pub modes: Vec<BonusMode>,
    /// Training iterations per policy; `None` uses `trpo.iterations`.
    pub iterations: Option<usize>,
    /// Number of tasks, each trained once per mode.
    pub tasks: usize,
    /// Evaluation rollouts per trained policy.
    pub episodes: usize,
    /// `|delta o_0|` above which an episode counts as moving the object.
    pub moved_threshold: f64,
    /// Cells per side of the pusher occupancy grid.
    pub grid: usize,
}

impl Default for PureConfig {
    fn default() -> Self {
        Self {
            modes: vec![BonusMode::Oracle, BonusMode::Latent, BonusMode::State],
            iterations: None,
            tasks: 1,
            episodes: 100,
            moved_threshold: 0.05,
            grid: 20,
        }
    }
}

/// Everything a pipeline run needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvConfig,
    /// Number of prior tasks `N`.
    pub prior_tasks: usize,
    /// Number of evaluation tasks `M`.
    pub eval_tasks: usize,
    pub seeds_per_task: usize,
    pub collect: CollectConfig,
    pub regressor: RegressorConfig,
    pub probe: ProbeConfig,
    pub vae: VaeConfig,
    pub trpo: TrpoConfig,
    /// Partial TRPO settings applied on top of `trpo` for one mode.
    pub trpo_overrides: BTreeMap<BonusMode, Map<String, Value>>,
    pub modes: Vec<BonusMode>,
    pub pure: PureConfig,
    pub out_dir: PathBuf,
    /// Encoder checkpoint; defaults to the `pretrain` output under `out_dir`.
    pub encoder_path: Option<PathBuf>,
    pub parallel: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            prior_tasks: 10,
            eval_tasks: 10,
            seeds_per_task: 3,
            collect: CollectConfig::default(),
            regressor: RegressorConfig::default(),
            probe: ProbeConfig::default(),
            vae: VaeConfig::default(),
            trpo: TrpoConfig::default(),
            trpo_overrides: BTreeMap::new(),
            modes: BonusMode::ALL.to_vec(),
            pure: PureConfig::default(),
            out_dir: PathBuf::from("out"),
            encoder_path: None,
            parallel: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.prior_tasks < 2 {
            return bad("prior_tasks must be at least 2");
        }
        if self.eval_tasks == 0 || self.seeds_per_task == 0 {
            return bad("eval_tasks and seeds_per_task must be positive");
        }
        if self.trpo.horizon != self.env.horizon {
            return bad("trpo.horizon must equal env.horizon");
        }
        if self.parallel == 0 {
            return bad("parallel must be positive");
        }
        if self.collect.iterations == 0 || self.collect.episodes_per_iter == 0 {
            return bad("collect needs at least one iteration and episode");
        }
        if !(0.0..=1.0).contains(&self.collect.controller_fraction) {
            return bad("collect.controller_fraction must lie in [0, 1]");
        }
        if self.probe.distractor == 0 || self.probe.distractor >= crate::env::NUM_OBJECTS {
            return bad("probe.distractor must name an object other than 0");
        }
        if self.pure.grid == 0 || self.pure.episodes == 0 || self.pure.tasks == 0 {
            return bad("pure.grid, pure.episodes and pure.tasks must be positive");
        }
        for mode in &self.modes {
            self.trpo_for(*mode)?;
        }
        for mode in &self.pure.modes {
            self.pure_explore_config(*mode)?;
        }
        Ok(())
    }

    /// TRPO settings of `mode`: the base section, the mode's overrides, and
    /// `bonus_mode = mode`.
    pub fn trpo_for(&self, mode: BonusMode) -> Result<TrpoConfig> {
        let mut base = serde_json::to_value(&self.trpo).expect("config serializes");
        if let Some(over) = self.trpo_overrides.get(&mode) {
            let obj = base.as_object_mut().expect("object");
            for (k, v) in over {
                obj.insert(k.clone(), v.clone());
            }
        }
        let mut cfg: TrpoConfig = serde_json::from_value(base)
            .map_err(|e| HarnessError::Config(format!("trpo_overrides.{mode}: {e}")))?;
        cfg.bonus_mode = mode;
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn explore_config(&self, mode: BonusMode) -> Result<ExploreConfig> {
        Ok(ExploreConfig {
            env: self.env.clone(),
            trpo: self.trpo_for(mode)?,
            vae: self.vae.clone(),
        })
    }

    /// Bonus-only settings used by pure exploration.
    pub fn pure_explore_config(&self, mode: BonusMode) -> Result<ExploreConfig> {
        let mut cfg = self.explore_config(mode)?;
        cfg.trpo.zero_env_reward = true;
        if let Some(it) = self.pure.iterations {
            cfg.trpo.iterations = it;
        }
        cfg.trpo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn encoder_path(&self) -> PathBuf {
        self.encoder_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join(super::PRETRAIN_DIR).join(super::ENCODER_FILE))
    }
}
