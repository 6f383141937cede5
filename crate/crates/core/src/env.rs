//! 2D object pusher.
//!
//! Seven disc objects, one disc pusher and a goal live on the board `[-1, 1]^2`.
//! The agent commands pusher displacements; contacts are resolved
//! quasi-statically by moving touched objects out of overlap. Reward is sparse:
//! it is non-zero only while object 0 lies strictly within `delta` of the goal.

use crate::policy::GaussianPolicy;
use crate::rng::rng_from;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const NUM_OBJECTS: usize = 7;
pub const STATE_DIM: usize = 2 * NUM_OBJECTS + 4;
pub const ACTION_DIM: usize = 2;
/// Offset of the pusher coordinates inside a flattened state.
pub const PUSHER_OFFSET: usize = 2 * NUM_OBJECTS;
/// Offset of the goal coordinates inside a flattened state.
pub const GOAL_OFFSET: usize = PUSHER_OFFSET + 2;

const MAX_SAMPLING_ATTEMPTS: usize = 10_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("task generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("invalid action: {0:?}")]
    InvalidAction([f64; 2]),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("policy evaluation failed: {0}")]
    Policy(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// `d^2` while `d < delta`, else 0.
    #[default]
    Literal,
    /// `delta^2 - d^2` while `d < delta`, else 0.
    ShapedInCircle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Half side of the square board.
    pub board_half_width: f64,
    /// Initial positions are drawn uniformly from `[-s, s]^2`.
    pub sample_half_width: f64,
    pub pusher_radius: f64,
    pub object_radius: f64,
    /// Per-component action limit.
    pub max_action: f64,
    pub horizon: usize,
    /// Sparsity radius of the reward.
    pub delta: f64,
    pub reward_variant: RewardVariant,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            board_half_width: 1.0,
            sample_half_width: 0.9,
            pusher_radius: 0.05,
            object_radius: 0.05,
            max_action: 0.1,
            horizon: 50,
            delta: 0.1,
            reward_variant: RewardVariant::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn clamp(self, half: f64) -> Self {
        Self::new(self.x.clamp(-half, half), self.y.clamp(-half, half))
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Initial configuration of one pusher task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub object_init: [Vec2; NUM_OBJECTS],
    pub pusher_init: Vec2,
    pub goal: Vec2,
    pub seed: u64,
}

impl TaskSpec {
    pub fn initial_state(&self) -> EnvState {
        EnvState {
            objects: self.object_init,
            pusher: self.pusher_init,
            goal: self.goal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub objects: [Vec2; NUM_OBJECTS],
    pub pusher: Vec2,
    pub goal: Vec2,
}

impl EnvState {
    /// `[o_0, ..., o_6, pusher, goal]`, each as `(x, y)`.
    pub fn flatten(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for (i, o) in self.objects.iter().enumerate() {
            out[2 * i] = o.x;
            out[2 * i + 1] = o.y;
        }
        out[PUSHER_OFFSET] = self.pusher.x;
        out[PUSHER_OFFSET + 1] = self.pusher.y;
        out[GOAL_OFFSET] = self.goal.x;
        out[GOAL_OFFSET + 1] = self.goal.y;
        out
    }

    pub fn unflatten(s: &[f64]) -> Result<Self> {
        if s.len() != STATE_DIM {
            return Err(EnvError::InvalidState(format!(
                "expected {STATE_DIM} components, got {}",
                s.len()
            )));
        }
        let mut objects = [Vec2::default(); NUM_OBJECTS];
        for (i, o) in objects.iter_mut().enumerate() {
            *o = Vec2::new(s[2 * i], s[2 * i + 1]);
        }
        Ok(Self {
            objects,
            pusher: Vec2::new(s[PUSHER_OFFSET], s[PUSHER_OFFSET + 1]),
            goal: Vec2::new(s[GOAL_OFFSET], s[GOAL_OFFSET + 1]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.objects.iter().all(|o| o.is_finite()) && self.pusher.is_finite() && self.goal.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: Vec2,
}

impl Action {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self {
            delta: Vec2::new(dx, dy),
        }
    }

    /// The displacement actually applied after component-wise clamping.
    pub fn clamped(self, max_action: f64) -> Vec2 {
        self.delta.clamp(max_action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Draws a task with all bodies inside `[-s, s]^2` and no initial overlaps.
pub fn sample_task(rng_seed: u64, cfg: &EnvConfig) -> Result<TaskSpec> {
    let mut rng = rng_from(rng_seed);
    let s = cfg.sample_half_width;
    let obj_sep = 2.0 * cfg.object_radius;
    let pusher_sep = cfg.pusher_radius + cfg.object_radius;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| Vec2::new(rng.random_range(-s..=s), rng.random_range(-s..=s));
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut objects = [Vec2::default(); NUM_OBJECTS];
        for o in objects.iter_mut() {
            *o = draw(&mut rng);
        }
        let pusher = draw(&mut rng);
        let goal = draw(&mut rng);
        let objects_ok = (0..NUM_OBJECTS)
            .all(|i| (i + 1..NUM_OBJECTS).all(|j| objects[i].dist(objects[j]) > obj_sep));
        let pusher_ok = objects.iter().all(|o| o.dist(pusher) > pusher_sep);
        if objects_ok && pusher_ok {
            return Ok(TaskSpec {
                object_init: objects,
                pusher_init: pusher,
                goal,
                seed: rng_seed,
            });
        }
    }
    Err(EnvError::GenerationFailed(MAX_SAMPLING_ATTEMPTS))
}

/// Literal sparse reward: `d^2` if `d < delta` (strict), else 0,
/// with `d` the distance from object 0 to the goal.
pub fn reward(state: &EnvState, delta: f64) -> f64 {
    reward_variant(state, delta, RewardVariant::Literal)
}

pub fn reward_variant(state: &EnvState, delta: f64, variant: RewardVariant) -> f64 {
    let d = state.objects[0].dist(state.goal);
    if d < delta {
        match variant {
            RewardVariant::Literal => d * d,
            RewardVariant::ShapedInCircle => delta * delta - d * d,
        }
    } else {
        0.0
    }
}

/// Advances the simulator by one step.
pub fn step(state: &EnvState, action: Action, cfg: &EnvConfig) -> Result<StepResult> {
    if !action.delta.is_finite() {
        return Err(EnvError::InvalidAction([action.delta.x, action.delta.y]));
    }
    if !state.is_finite() {
        return Err(EnvError::InvalidState("non-finite component".into()));
    }
    let half = cfg.board_half_width;
    let motion = action.clamped(cfg.max_action);
    let mut next = state.clone();
    next.pusher = (state.pusher + motion).clamp(half);

    let contact = cfg.pusher_radius + cfg.object_radius;
    let mut moved = [false; NUM_OBJECTS];
    for (o, m) in next.objects.iter_mut().zip(moved.iter_mut()) {
        let offset = *o - next.pusher;
        let dist = offset.norm();
        if dist < contact {
            let dir = unit_or(offset, dist, motion);
            *o = next.pusher + dir * contact;
            *m = true;
        }
    }

    let sep = 2.0 * cfg.object_radius;
    for i in 0..NUM_OBJECTS {
        for j in i + 1..NUM_OBJECTS {
            if !(moved[i] || moved[j]) {
                continue;
            }
            let offset = next.objects[j] - next.objects[i];
            let dist = offset.norm();
            if dist >= sep {
                continue;
            }
            let dir = unit_or(offset, dist, motion);
            match (moved[i], moved[j]) {
                (true, false) => {
                    next.objects[j] = next.objects[i] + dir * sep;
                    moved[j] = true;
                }
                (false, true) => {
                    next.objects[i] = next.objects[j] - dir * sep;
                    moved[i] = true;
                }
                _ => {
                    let mid = (next.objects[i] + next.objects[j]) * 0.5;
                    next.objects[i] = mid - dir * cfg.object_radius;
                    next.objects[j] = mid + dir * cfg.object_radius;
                }
            }
        }
    }
    for (o, m) in next.objects.iter_mut().zip(moved) {
        if m {
            *o = o.clamp(half);
        }
    }

    let reward = reward_variant(&next, cfg.delta, cfg.reward_variant);
    Ok(StepResult {
        next_state: next,
        reward,
        done: false,
    })
}

/// Unit vector along `offset`; falls back to the pusher motion, then +x, when
/// the centers coincide.
fn unit_or(offset: Vec2, dist: f64, motion: Vec2) -> Vec2 {
    if dist > 0.0 {
        offset * (1.0 / dist)
    } else if motion.norm() > 0.0 {
        motion * (1.0 / motion.norm())
    } else {
        Vec2::new(1.0, 0.0)
    }
}

/// A mutable simulator instance for interactive use.
#[derive(Debug, Clone)]
pub struct PusherEnv {
    pub config: EnvConfig,
    state: EnvState,
}

impl PusherEnv {
    pub fn new(task: &TaskSpec, config: EnvConfig) -> Self {
        Self {
            config,
            state: task.initial_state(),
        }
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn reset(&mut self, task: &TaskSpec) -> &EnvState {
        self.state = task.initial_state();
        &self.state
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let res = step(&self.state, action, &self.config)?;
        self.state = res.next_state.clone();
        Ok(res)
    }
}

/// One fixed-horizon episode. `states[t]` is observed before `actions[t]`;
/// `rewards[t]` is earned on the resulting state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<[f64; STATE_DIM]>,
    /// Sampled (unclamped) policy actions.
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    pub final_state: [f64; STATE_DIM],
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Runs one episode of `policy` on `task`, drawing action noise from `rng_seed`.
pub fn rollout(
    policy: &GaussianPolicy,
    task: &TaskSpec,
    cfg: &EnvConfig,
    horizon: usize,
    rng_seed: u64,
) -> Result<Trajectory> {
    Ok(rollout_batch(policy, task, cfg, horizon, &[rng_seed])?.remove(0))
}

/// Runs one episode per seed in lockstep so policy evaluation is batched.
/// Each episode draws its noise from its own seeded stream.
pub fn rollout_batch(
    policy: &GaussianPolicy,
    task: &TaskSpec,
    cfg: &EnvConfig,
    horizon: usize,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    if horizon == 0 {
        return Err(EnvError::EmptyHorizon);
    }
    let n = seeds.len();
    let std: Vec<f64> = policy.log_std().iter().map(|l| l.exp()).collect();
    let mut rngs: Vec<_> = seeds.iter().map(|&s| rng_from(s)).collect();
    let mut states: Vec<EnvState> = vec![task.initial_state(); n];
    let mut trajs: Vec<Trajectory> = (0..n)
        .map(|_| Trajectory {
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            final_state: [0.0; STATE_DIM],
        })
        .collect();
    let mut obs = Array2::<f64>::zeros((n, STATE_DIM));
    for _ in 0..horizon {
        for (e, st) in states.iter().enumerate() {
            let flat = st.flatten();
            obs.row_mut(e).iter_mut().zip(flat).for_each(|(o, v)| *o = v);
        }
        let means = policy
            .mean_batch(obs.view())
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        for e in 0..n {
            let mut a = [0.0; ACTION_DIM];
            for (j, aj) in a.iter_mut().enumerate() {
                let eps: f64 = rngs[e].sample(StandardNormal);
                *aj = means[[e, j]] + std[j] * eps;
            }
            let res = step(&states[e], Action::new(a[0], a[1]), cfg)?;
            let tr = &mut trajs[e];
            tr.states.push(states[e].flatten());
            tr.actions.push(a);
            tr.rewards.push(res.reward);
            states[e] = res.next_state;
        }
    }
    for (tr, st) in trajs.iter_mut().zip(&states) {
        tr.final_state = st.flatten();
    }
    Ok(trajs)
}

/// One persisted transition, serialized as a JSONL line. `r` is earned on
/// `s_next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub task_id: usize,
    pub iter: usize,
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn far_state() -> EnvState {
        let mut objects = [Vec2::default(); NUM_OBJECTS];
        for (i, o) in objects.iter_mut().enumerate() {
            *o = Vec2::new(-0.8 + 0.25 * i as f64, 0.7);
        }
        EnvState {
            objects,
            pusher: Vec2::new(0.0, -0.5),
            goal: Vec2::new(0.5, -0.5),
        }
    }

    #[test]
    fn sample_task_is_deterministic() {
        let cfg = EnvConfig::default();
        assert_eq!(sample_task(7, &cfg).unwrap(), sample_task(7, &cfg).unwrap());
        assert_ne!(sample_task(7, &cfg).unwrap(), sample_task(8, &cfg).unwrap());
    }

    #[test]
    fn sampled_bodies_in_board_and_separated() {
        let cfg = EnvConfig::default();
        let mut min_obj = f64::INFINITY;
        let mut min_pusher = f64::INFINITY;
        for seed in 0..1000 {
            let t = sample_task(seed, &cfg).unwrap();
            for p in t.object_init.iter().chain([&t.pusher_init, &t.goal]) {
                assert!(p.x.abs() <= 1.0 && p.y.abs() <= 1.0);
            }
            for i in 0..NUM_OBJECTS {
                for j in i + 1..NUM_OBJECTS {
                    min_obj = min_obj.min(t.object_init[i].dist(t.object_init[j]));
                }
                min_pusher = min_pusher.min(t.object_init[i].dist(t.pusher_init));
            }
        }
        assert!(min_obj > 2.0 * cfg.object_radius);
        assert!(min_pusher > cfg.object_radius + cfg.pusher_radius);
    }

    #[test]
    fn impossible_geometry_fails() {
        let cfg = EnvConfig {
            object_radius: 0.5,
            ..EnvConfig::default()
        };
        assert_eq!(sample_task(1, &cfg), Err(EnvError::GenerationFailed(10_000)));
    }

    #[test]
    fn reward_examples() {
        let mut s = far_state();
        s.objects[0] = Vec2::new(0.55, -0.5);
        assert!((reward(&s, 0.1) - 0.0025).abs() < 1e-15);
        s.objects[0] = s.goal;
        assert_eq!(reward(&s, 0.1), 0.0);
        s.objects[0] = Vec2::new(0.5, 0.0);
        assert_eq!(reward(&s, 0.1), 0.0);
        // boundary is excluded
        s.objects[0] = Vec2::new(0.5, -0.25);
        assert_eq!(reward(&s, 0.25), 0.0);
    }

    #[test]
    fn shaped_variant_peaks_at_goal() {
        let mut s = far_state();
        s.objects[0] = s.goal;
        assert!((reward_variant(&s, 0.1, RewardVariant::ShapedInCircle) - 0.01).abs() < 1e-15);
        s.objects[0] = Vec2::new(0.55, -0.5);
        assert!((reward_variant(&s, 0.1, RewardVariant::ShapedInCircle) - 0.0075).abs() < 1e-15);
    }

    #[test]
    fn free_motion_moves_only_pusher() {
        let cfg = EnvConfig::default();
        let s = far_state();
        let r = step(&s, Action::new(0.05, 0.0), &cfg).unwrap();
        assert_eq!(r.next_state.objects, s.objects);
        assert_eq!(r.next_state.pusher.x, s.pusher.x + 0.05);
        assert_eq!(r.next_state.pusher.y, s.pusher.y);
        assert!(!r.done);
    }

    #[test]
    fn zero_action_is_identity() {
        let cfg = EnvConfig::default();
        let s = far_state();
        assert_eq!(step(&s, Action::new(0.0, 0.0), &cfg).unwrap().next_state, s);
    }

    #[test]
    fn actions_are_clamped() {
        let cfg = EnvConfig::default();
        let s = far_state();
        let r = step(&s, Action::new(5.0, -5.0), &cfg).unwrap();
        assert!((r.next_state.pusher.x - 0.1).abs() < 1e-15);
        assert!((r.next_state.pusher.y + 0.6).abs() < 1e-15);
    }

    #[test]
    fn non_finite_action_rejected() {
        let cfg = EnvConfig::default();
        assert!(matches!(
            step(&far_state(), Action::new(f64::NAN, 0.0), &cfg),
            Err(EnvError::InvalidAction(_))
        ));
        assert!(step(&far_state(), Action::new(0.0, f64::INFINITY), &cfg).is_err());
    }

    #[test]
    fn straight_push_is_collinear() {
        let cfg = EnvConfig::default();
        let mut s = far_state();
        let dir = Vec2::new(0.8, 0.6);
        s.objects[3] = Vec2::new(0.1, 0.1);
        s.pusher = s.objects[3] - dir * 0.3;
        let start = s.objects[3];
        for _ in 0..12 {
            s = step(&s, Action::new(dir.x * 0.08, dir.y * 0.08), &cfg).unwrap().next_state;
        }
        let disp = s.objects[3] - start;
        assert!(disp.norm() > 0.3);
        let cross = (disp.x * dir.y - disp.y * dir.x) / disp.norm();
        assert!(cross.abs() < 1e-9, "cross = {cross}");
        // resolved exactly to contact distance
        assert!((s.objects[3].dist(s.pusher) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn object_chain_push() {
        let cfg = EnvConfig::default();
        let mut s = far_state();
        s.objects[1] = Vec2::new(0.2, 0.0);
        s.objects[2] = Vec2::new(0.3, 0.0);
        s.pusher = Vec2::new(0.05, 0.0);
        let r = step(&s, Action::new(0.1, 0.0), &cfg).unwrap();
        let o1 = r.next_state.objects[1];
        let o2 = r.next_state.objects[2];
        assert!((o1.x - 0.25).abs() < 1e-12);
        assert!((o2.x - 0.35).abs() < 1e-12);
    }

    #[test]
    fn flatten_layout() {
        let s = far_state();
        let f = s.flatten();
        assert_eq!(f.len(), 18);
        assert_eq!(f[0], s.objects[0].x);
        assert_eq!(f[13], s.objects[6].y);
        assert_eq!(&f[14..16], &[s.pusher.x, s.pusher.y]);
        assert_eq!(&f[16..18], &[s.goal.x, s.goal.y]);
        assert!(EnvState::unflatten(&f[..17]).is_err());
    }

    fn arb_task() -> impl Strategy<Value = TaskSpec> {
        any::<u64>().prop_map(|seed| sample_task(seed, &EnvConfig::default()).unwrap())
    }

    proptest! {
        #[test]
        fn flatten_round_trip(task in arb_task()) {
            let s = task.initial_state();
            prop_assert_eq!(EnvState::unflatten(&s.flatten()).unwrap(), s);
        }

        #[test]
        fn random_walks_respect_invariants(
            task in arb_task(),
            actions in proptest::collection::vec((-0.3f64..0.3, -0.3f64..0.3), 1..120),
        ) {
            let cfg = EnvConfig::default();
            let mut s = task.initial_state();
            let contact = cfg.pusher_radius + cfg.object_radius;
            for (dx, dy) in actions {
                let r = step(&s, Action::new(dx, dy), &cfg).unwrap();
                let next = &r.next_state;
                prop_assert!(next.flatten().iter().all(|v| (-1.0..=1.0).contains(v)));
                prop_assert_eq!(next.goal, task.goal);
                prop_assert!(r.reward >= 0.0 && r.reward < cfg.delta * cfg.delta);
                if r.reward > 0.0 {
                    prop_assert!(next.objects[0].dist(next.goal) < cfg.delta);
                }
                let clear = |st: &EnvState, p: Vec2| st.objects.iter().all(|o| o.dist(p) > contact);
                if clear(&s, next.pusher) && clear(next, next.pusher) {
                    prop_assert_eq!(next.objects, s.objects);
                }
                s = r.next_state;
            }
        }
    }
}
