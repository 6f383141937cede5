use super::{PolicyError, Result, TrajectoryBatch};
use crate::env::STATE_DIM;
use crate::regressor::LatentEncoder;
use crate::rng::derive_seed;
use crate::vae::{bonus_batch, Vae};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which quantity the density model sees when scoring novelty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BonusMode {
    /// Position of the object of interest, `s[0..2]`.
    Oracle,
    /// Output of the frozen latent encoder.
    #[default]
    Latent,
    /// The full state vector.
    State,
    /// The executed action.
    Action,
    /// No bonus.
    None,
}

impl BonusMode {
    pub const ALL: [BonusMode; 5] = [
        BonusMode::Oracle,
        BonusMode::Latent,
        BonusMode::State,
        BonusMode::Action,
        BonusMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BonusMode::Oracle => "oracle",
            BonusMode::Latent => "latent",
            BonusMode::State => "state",
            BonusMode::Action => "action",
            BonusMode::None => "none",
        }
    }

    /// Width of the feature vector handed to the density model.
    pub fn feature_dim(self, state_dim: usize, action_dim: usize, encoder: Option<&LatentEncoder>) -> Result<usize> {
        Ok(match self {
            BonusMode::Oracle => 2,
            BonusMode::Latent => encoder.ok_or(PolicyError::MissingEncoder)?.latent_dim(),
            BonusMode::State => state_dim,
            BonusMode::Action => action_dim,
            BonusMode::None => 0,
        })
    }
}

impl fmt::Display for BonusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BonusMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        BonusMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown bonus mode `{s}`"))
    }
}

/// Features of a single step for the given mode.
pub fn bonus_features(state: &[f64], action: &[f64], mode: BonusMode, encoder: Option<&LatentEncoder>) -> Result<Vec<f64>> {
    Ok(match mode {
        BonusMode::Oracle => {
            if state.len() < 2 {
                return Err(PolicyError::DimensionMismatch {
                    what: "state",
                    expected: STATE_DIM,
                    got: state.len(),
                });
            }
            state[..2].to_vec()
        }
        BonusMode::Latent => encoder.ok_or(PolicyError::MissingEncoder)?.encode(state)?,
        BonusMode::State => state.to_vec(),
        BonusMode::Action => action.to_vec(),
        BonusMode::None => Vec::new(),
    })
}

/// Features of every step in `batch`; `None` for [`BonusMode::None`].
pub fn batch_features(batch: &TrajectoryBatch, mode: BonusMode, encoder: Option<&LatentEncoder>) -> Result<Option<Array2<f64>>> {
    Ok(match mode {
        BonusMode::Oracle => Some(batch.states.slice(s![.., 0..2]).to_owned()),
        BonusMode::Latent => Some(encoder.ok_or(PolicyError::MissingEncoder)?.encode_batch(batch.states.view())?),
        BonusMode::State => Some(batch.states.clone()),
        BonusMode::Action => Some(batch.executed_actions.clone()),
        BonusMode::None => None,
    })
}

/// Scores `features` with the VAE and writes `bonus` and
/// `augmented = env + scale * bonus` for every step. Without features (mode
/// `none`) the bonus is zero. Row `r` draws its noise from
/// `derive_seed(bonus_seed, [r])`.
pub fn augment(
    batch: &mut TrajectoryBatch,
    vae: Option<&Vae>,
    features: Option<ArrayView2<'_, f64>>,
    bonus_scale: f64,
    bonus_seed: u64,
) -> Result<()> {
    match (vae, features) {
        (Some(vae), Some(feats)) => {
            if feats.nrows() != batch.len() {
                return Err(PolicyError::DimensionMismatch {
                    what: "feature rows",
                    expected: batch.len(),
                    got: feats.nrows(),
                });
            }
            if feats.ncols() != vae.input_dim() {
                return Err(PolicyError::DimensionMismatch {
                    what: "vae input",
                    expected: vae.input_dim(),
                    got: feats.ncols(),
                });
            }
            let seeds: Vec<u64> = (0..batch.len() as u64).map(|r| derive_seed(bonus_seed, &[r])).collect();
            let est = bonus_batch(vae, feats, &seeds)?;
            for (b, e) in batch.bonuses.iter_mut().zip(&est) {
                *b = e.neg_elbo;
            }
        }
        (None, None) => batch.bonuses.iter_mut().for_each(|b| *b = 0.0),
        _ => {
            return Err(PolicyError::InvalidConfig(
                "bonus features and density model must be given together".into(),
            ))
        }
    }
    for ((a, r), b) in batch.augmented_rewards.iter_mut().zip(&batch.env_rewards).zip(&batch.bonuses) {
        *a = r + bonus_scale * b;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, Mlp, NetSpec};
    use crate::env::{rollout_batch, sample_task, EnvConfig};
    use crate::policy::GaussianPolicy;
    use crate::vae::VaeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> LatentEncoder {
        let spec = NetSpec::mlp(STATE_DIM, &[8], 2, Activation::Tanh).unwrap();
        LatentEncoder::from_trunk(Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(3)))
    }

    fn batch() -> TrajectoryBatch {
        let cfg = EnvConfig::default();
        let task = sample_task(1, &cfg).unwrap();
        let p = GaussianPolicy::new(STATE_DIM, 2, &[8], 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let trajs = rollout_batch(&p, &task, &cfg, 5, &[1, 2]).unwrap();
        TrajectoryBatch::from_trajectories(&trajs, &p, cfg.max_action).unwrap()
    }

    #[test]
    fn feature_modes() {
        let mut s = [0.0; STATE_DIM];
        s[0] = 0.3;
        s[1] = -0.2;
        s[5] = 0.7;
        let a = [0.05, -0.1];
        assert_eq!(bonus_features(&s, &a, BonusMode::Oracle, None).unwrap(), vec![0.3, -0.2]);
        assert_eq!(bonus_features(&s, &a, BonusMode::State, None).unwrap(), s.to_vec());
        assert_eq!(bonus_features(&s, &a, BonusMode::Action, None).unwrap(), a.to_vec());
        assert!(bonus_features(&s, &a, BonusMode::None, None).unwrap().is_empty());
        assert!(matches!(
            bonus_features(&s, &a, BonusMode::Latent, None),
            Err(PolicyError::MissingEncoder)
        ));
        let enc = encoder();
        let z = bonus_features(&s, &a, BonusMode::Latent, Some(&enc)).unwrap();
        assert_eq!(z, enc.encode(&s).unwrap());
        assert_eq!(z.len(), 2);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in BonusMode::ALL {
            assert_eq!(m.as_str().parse::<BonusMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("entropy".parse::<BonusMode>().is_err());
    }

    #[test]
    fn zero_scale_and_none_mode_leave_env_reward() {
        let mut b = batch();
        b.env_rewards[3] = 0.004;
        let vae = Vae::new(2, &VaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let feats = batch_features(&b, BonusMode::Oracle, None).unwrap().unwrap();
        augment(&mut b, Some(&vae), Some(feats.view()), 0.0, 7).unwrap();
        assert_eq!(b.augmented_rewards, b.env_rewards);
        assert!(b.bonuses.iter().all(|&x| x > 0.0));
        let mut c = batch();
        c.env_rewards[3] = 0.004;
        augment(&mut c, None, None, 0.1, 7).unwrap();
        assert_eq!(c.augmented_rewards, c.env_rewards);
        assert!(c.bonuses.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn augmentation_identity_holds_exactly() {
        let mut b = batch();
        let enc = encoder();
        let vae = Vae::new(2, &VaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let feats = batch_features(&b, BonusMode::Latent, Some(&enc)).unwrap().unwrap();
        augment(&mut b, Some(&vae), Some(feats.view()), 0.1, 3).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.augmented_rewards[i], b.env_rewards[i] + 0.1 * b.bonuses[i]);
        }
        // single-step arithmetic: bonus 2.0 at scale 0.1 on zero reward
        b.env_rewards[0] = 0.0;
        b.bonuses[0] = 2.0;
        assert!((b.env_rewards[0] + 0.1 * b.bonuses[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut b = batch();
        let vae = Vae::new(3, &VaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let feats = batch_features(&b, BonusMode::Oracle, None).unwrap().unwrap();
        assert!(augment(&mut b, Some(&vae), Some(feats.view()), 0.1, 0).is_err());
    }
}
