//! Offline imitation learning from the best of several baseline policies.
//!
//! The toolkit targets contextual deterministic decision processes where the
//! only reward signal is trajectory-level (here: negated final binary size of
//! a module after inlining decisions). Per context, trajectories are collected
//! from a roster of baseline policies, the best one is kept, and a small
//! softmax policy is trained to imitate it. On top of that sit confidence-gap
//! exploration around the collected trajectories, iterative retraining that
//! feeds each trained policy back into the roster, per-module weighting
//! schemes (size buckets, multiplicative weights), and a regret/oracle
//! evaluation bench with two hand-constructed environments that expose what
//! trajectory-level feedback cannot distinguish.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explorer;
pub mod mdp;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use mdp::{
    rollout, trajectory_reward, Action, Context, CorpusSpec, Environment, Policy, StateFeatures,
    StochasticPolicy, Trajectory, TrajectoryStep,
};
