//! Core types for contextual deterministic decision processes with
//! trajectory-level reward.
//!
//! A context fixes an episode (here: one module). Transitions are
//! deterministic, reward is revealed only for whole trajectories, and policies
//! are context-free: they see per-step state features, never the context id.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EnvParams;

/// One episode's identity: a stable id plus the seed that derives its
/// environment instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: u64,
    pub seed: u64,
}

/// Fixed-length real feature vector describing a decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateFeatures(pub Vec<f64>);

impl StateFeatures {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Binary decision at a callsite: keep the call or inline it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Keep,
    Inline,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Keep => 0,
            Action::Inline => 1,
        }
    }

    pub fn flip(self) -> Action {
        match self {
            Action::Keep => Action::Inline,
            Action::Inline => Action::Keep,
        }
    }

    pub fn from_index(value: u8) -> Result<Action> {
        match value {
            0 => Ok(Action::Keep),
            1 => Ok(Action::Inline),
            other => Err(Error::config(format!(
                "action must be 0 or 1, got {other}"
            ))),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Action::from_index(v).map_err(serde::de::Error::custom)
    }
}

/// One decision point: the features observed and the action taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub features: StateFeatures,
    pub action: Action,
}

/// A complete episode under one policy on one context.
///
/// `size` is the terminal cost (final module size); reward is `-size` and is
/// exposed through [`Trajectory::reward`] rather than stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub context_id: u64,
    pub policy_id: u64,
    pub steps: Vec<TrajectoryStep>,
    pub size: f64,
}

impl Trajectory {
    pub fn reward(&self) -> f64 {
        -self.size
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Trajectory-level reward: the negated terminal size.
pub fn trajectory_reward(trajectory: &Trajectory) -> f64 {
    trajectory.reward()
}

/// Deterministic policy over state features.
pub trait Policy: Sync {
    fn act(&self, features: &StateFeatures) -> Action;
}

/// Policy exposing a full action distribution (used for confidence gaps).
pub trait StochasticPolicy: Sync {
    /// Probabilities of (Keep, Inline); must sum to 1.
    fn action_dist(&self, features: &StateFeatures) -> (f64, f64);

    /// Absolute difference of the two action probabilities.
    fn gap(&self, features: &StateFeatures) -> f64 {
        let (p0, p1) = self.action_dist(features);
        (p0 - p1).abs()
    }
}

/// A deterministic episodic environment.
///
/// `run_with` drives one episode on `ctx`, consulting `actor` with the step
/// index and current features at every decision point, and returns the
/// completed trajectory (with `policy_id` left at 0 for the caller to fill
/// in). Implementations must be pure: identical contexts and actor decisions
/// yield identical trajectories.
pub trait Environment: Sync {
    fn feature_dim(&self) -> usize;

    fn run_with(
        &self,
        ctx: &Context,
        actor: &mut dyn FnMut(usize, &StateFeatures) -> Action,
    ) -> Trajectory;
}

/// Roll out a policy on one context.
pub fn rollout<E: Environment + ?Sized>(env: &E, policy: &dyn Policy, ctx: &Context) -> Trajectory {
    env.run_with(ctx, &mut |_, features| policy.act(features))
}

/// Replay a fixed action sequence; decisions past the end fall back to Keep.
pub fn replay<E: Environment + ?Sized>(env: &E, actions: &[Action], ctx: &Context) -> Trajectory {
    env.run_with(ctx, &mut |h, _| {
        actions.get(h).copied().unwrap_or(Action::Keep)
    })
}

/// Corpus description: every context is derived from the master seed by a
/// pure function, so a corpus is reproducible from this value alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_contexts: usize,
    pub master_seed: u64,
    pub env: EnvParams,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_contexts == 0 {
            return Err(Error::config("corpus must have at least one context"));
        }
        self.env.validate()
    }

    pub fn contexts(&self) -> Vec<Context> {
        (0..self.n_contexts as u64)
            .map(|i| Context {
                id: i,
                seed: context_seed(self.master_seed, i),
            })
            .collect()
    }
}

/// splitmix64 finalizer: a pure function of (master seed, index).
pub fn context_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_is_negated_size() {
        let t = Trajectory {
            context_id: 0,
            policy_id: 0,
            steps: vec![],
            size: 12.5,
        };
        assert_eq!(trajectory_reward(&t), -12.5);
        let z = Trajectory { size: 0.0, ..t };
        assert_eq!(trajectory_reward(&z), 0.0);
    }

    #[test]
    fn reward_ordering_matches_size_ordering() {
        let mk = |size| Trajectory {
            context_id: 0,
            policy_id: 0,
            steps: vec![],
            size,
        };
        let ts = [mk(14.0), mk(13.0), mk(14.0)];
        let argmin_size = (0..ts.len())
            .min_by(|&a, &b| ts[a].size.partial_cmp(&ts[b].size).unwrap())
            .unwrap();
        let argmax_reward = (0..ts.len())
            .max_by(|&a, &b| ts[a].reward().partial_cmp(&ts[b].reward()).unwrap())
            .unwrap();
        assert_eq!(argmin_size, 1);
        assert_eq!(argmin_size, argmax_reward);
    }

    #[test]
    fn action_codec_round_trips_and_rejects() {
        assert_eq!(serde_json::to_string(&Action::Keep).unwrap(), "0");
        assert_eq!(serde_json::to_string(&Action::Inline).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Action>("1").unwrap(), Action::Inline);
        assert!(serde_json::from_str::<Action>("2").is_err());
        assert_eq!(Action::Keep.flip(), Action::Inline);
        assert_eq!(Action::Inline.flip(), Action::Keep);
    }

    #[test]
    fn context_seeds_are_pure_and_distinct() {
        let a = context_seed(7, 0);
        assert_eq!(a, context_seed(7, 0));
        let seeds: Vec<u64> = (0..64).map(|i| context_seed(7, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
        assert_ne!(context_seed(8, 0), context_seed(7, 0));
    }

    #[test]
    fn corpus_contexts_are_reproducible() {
        let spec = CorpusSpec {
            n_contexts: 5,
            master_seed: 42,
            env: EnvParams::default(),
        };
        assert_eq!(spec.contexts(), spec.contexts());
        assert_eq!(spec.contexts().len(), 5);
        let ids: Vec<u64> = spec.contexts().iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let spec = CorpusSpec {
            n_contexts: 0,
            master_seed: 1,
            env: EnvParams::default(),
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
