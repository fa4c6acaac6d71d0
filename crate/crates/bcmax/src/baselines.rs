//! Built-in heuristic baseline policies over simulator features.
//!
//! Each reads only the per-callsite feature vector, so all of them are valid
//! context-free policies for any environment emitting simulator-shaped
//! features.

use serde::{Deserialize, Serialize};

use crate::mdp::{Action, Policy, StateFeatures};

/// Never inline.
pub struct NeverInline;

impl Policy for NeverInline {
    fn act(&self, _features: &StateFeatures) -> Action {
        Action::Keep
    }
}

/// Always inline.
pub struct AlwaysInline;

impl Policy for AlwaysInline {
    fn act(&self, _features: &StateFeatures) -> Action {
        Action::Inline
    }
}

/// Inline iff the callee's current size is at most the threshold.
pub struct SmallCallee {
    pub threshold: f64,
}

impl Policy for SmallCallee {
    fn act(&self, features: &StateFeatures) -> Action {
        if features.0[0] <= self.threshold {
            Action::Inline
        } else {
            Action::Keep
        }
    }
}

/// Inline iff this is the only live call to the callee.
pub struct UniqueCallee;

impl Policy for UniqueCallee {
    fn act(&self, features: &StateFeatures) -> Action {
        if features.0[2] == 1.0 {
            Action::Inline
        } else {
            Action::Keep
        }
    }
}

/// Serializable baseline description used in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineSpec {
    Never,
    Always,
    Small { threshold: f64 },
    Unique,
}

impl BaselineSpec {
    pub fn build(&self) -> Box<dyn Policy + Send + Sync> {
        match self {
            BaselineSpec::Never => Box::new(NeverInline),
            BaselineSpec::Always => Box::new(AlwaysInline),
            BaselineSpec::Small { threshold } => Box::new(SmallCallee {
                threshold: *threshold,
            }),
            BaselineSpec::Unique => Box::new(UniqueCallee),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BaselineSpec::Never => "never".into(),
            BaselineSpec::Always => "always".into(),
            BaselineSpec::Small { threshold } => format!("small({threshold})"),
            BaselineSpec::Unique => "unique".into(),
        }
    }
}

/// The default heuristic roster.
pub fn default_roster() -> Vec<BaselineSpec> {
    vec![
        BaselineSpec::Never,
        BaselineSpec::Always,
        BaselineSpec::Small { threshold: 6.0 },
        BaselineSpec::Unique,
    ]
}
