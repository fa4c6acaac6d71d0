//! Gap-guided single-flip exploration around a base policy.
//!
//! Exploration probes the neighborhood of a deterministic base policy by
//! flipping one action per round at the step where a stochastic guide policy
//! is least confident (smallest probability gap), then letting the base
//! policy finish the episode. Each later round flips strictly after the
//! previous flip, on the latest explored trajectory, so rounds walk forward
//! through the episode. The best (smallest) trajectory found is returned;
//! ties keep the earlier discovery, so exploration never loses to the
//! vanilla rollout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, Context, Environment, Policy, StochasticPolicy, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    /// Rounds as a fraction of the vanilla trajectory length (rounded up).
    pub rho: f64,
    /// Absolute cap on rounds regardless of trajectory length.
    pub t_max: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig { rho: 0.1, t_max: 32 }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) || !self.rho.is_finite() {
            return Err(Error::config(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        Ok(())
    }
}

/// Number of exploration rounds for a vanilla trajectory of `len` steps.
pub fn round_budget(config: &ExploreConfig, len: usize) -> usize {
    ((config.rho * len as f64).ceil() as usize).min(config.t_max)
}

/// A stochastic guide with no opinion: every state has zero gap, so argmin
/// tie-breaking walks flips through the earliest untried steps. Used on the
/// first pipeline iteration, before any trained policy exists.
#[derive(Debug, Clone, Copy)]
pub struct UniformGap;

impl StochasticPolicy for UniformGap {
    fn action_dist(&self, _features: &crate::mdp::StateFeatures) -> (f64, f64) {
        (0.5, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreResult {
    /// Size-minimal trajectory among the vanilla rollout and all rounds.
    pub best: Trajectory,
    /// Size of the unexplored base-policy rollout.
    pub vanilla_size: f64,
    /// Flip positions, one per completed round; strictly increasing.
    pub flip_steps: Vec<usize>,
    /// Whether any round beat the vanilla size strictly.
    pub improved: bool,
}

/// Explore one context around `base`, guided by `guide`'s confidence gaps.
pub fn explore_module(
    env: &(impl Environment + ?Sized),
    base: &(dyn Policy + Sync),
    guide: &(dyn StochasticPolicy + Sync),
    ctx: &Context,
    config: &ExploreConfig,
) -> ExploreResult {
    let (result, _) = explore_with_trace(env, base, guide, ctx, config);
    result
}

/// Same as `explore_module`, also returning every trajectory in round order
/// (index 0 is the vanilla rollout). Exposed for invariant checks.
pub fn explore_with_trace(
    env: &(impl Environment + ?Sized),
    base: &(dyn Policy + Sync),
    guide: &(dyn StochasticPolicy + Sync),
    ctx: &Context,
    config: &ExploreConfig,
) -> (ExploreResult, Vec<Trajectory>) {
    let vanilla = rollout(env, base, ctx);
    let vanilla_size = vanilla.size;
    let budget = round_budget(config, vanilla.steps.len());
    let mut trace = vec![vanilla.clone()];
    let mut best = vanilla.clone();
    let mut latest = vanilla;
    let mut flip_steps = Vec::new();
    let mut improved = false;

    for _ in 0..budget {
        let start = flip_steps.last().map(|&h| h + 1).unwrap_or(0);
        if start >= latest.steps.len() {
            break;
        }
        let mut flip_at = start;
        let mut min_gap = f64::INFINITY;
        for (h, step) in latest.steps.iter().enumerate().skip(start) {
            let gap = guide.gap(&step.features);
            if gap < min_gap {
                min_gap = gap;
                flip_at = h;
            }
        }

        let prefix: Vec<crate::mdp::Action> =
            latest.steps[..flip_at].iter().map(|s| s.action).collect();
        let next = env.run_with(ctx, &mut |h, features| {
            if h < flip_at {
                prefix[h]
            } else if h == flip_at {
                base.act(features).flip()
            } else {
                base.act(features)
            }
        });

        flip_steps.push(flip_at);
        if next.size < best.size {
            best = next.clone();
            improved = true;
        }
        trace.push(next.clone());
        latest = next;
    }

    (
        ExploreResult {
            best,
            vanilla_size,
            flip_steps,
            improved,
        },
        trace,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{NeverInline, SmallCallee};
    use crate::mdp::{Action, StateFeatures};
    use crate::policy::PolicyParams;
    use crate::sim::{Callsite, EnvParams, FunctionNode, InlineSim, ModuleGraph, SimState};

    /// Three fixed decision steps; inlining at step 1 saves one unit.
    struct ThreeStepEnv;

    impl Environment for ThreeStepEnv {
        fn feature_dim(&self) -> usize {
            1
        }

        fn run_with(
            &self,
            ctx: &Context,
            act: &mut dyn FnMut(usize, &StateFeatures) -> Action,
        ) -> Trajectory {
            let mut steps = Vec::new();
            let mut size = 14.0;
            for h in 0..3 {
                let features = StateFeatures(vec![h as f64]);
                let action = act(h, &features);
                if h == 1 && action == Action::Inline {
                    size -= 1.0;
                }
                steps.push(crate::mdp::TrajectoryStep { features, action });
            }
            Trajectory {
                context_id: ctx.id,
                policy_id: 0,
                steps,
                size,
            }
        }
    }

    /// Prescribed confidence gaps per step index.
    struct TableGaps(Vec<f64>);

    impl StochasticPolicy for TableGaps {
        fn action_dist(&self, features: &StateFeatures) -> (f64, f64) {
            let gap = self.0[features.0[0] as usize];
            (0.5 + gap / 2.0, 0.5 - gap / 2.0)
        }
    }

    fn ctx(id: u64) -> Context {
        Context { id, seed: id }
    }

    #[test]
    fn zero_budget_returns_the_vanilla_rollout() {
        let config = ExploreConfig { rho: 0.0, t_max: 32 };
        let result = explore_module(&ThreeStepEnv, &NeverInline, &UniformGap, &ctx(0), &config);
        let vanilla = rollout(&ThreeStepEnv, &NeverInline, &ctx(0));
        assert_eq!(result.best, vanilla);
        assert!(result.flip_steps.is_empty());
        assert!(!result.improved);
    }

    #[test]
    fn round_budget_rounds_up_and_caps() {
        let c = |rho, t_max| ExploreConfig { rho, t_max };
        assert_eq!(round_budget(&c(0.1, 32), 1), 1);
        assert_eq!(round_budget(&c(0.1, 32), 10), 1);
        assert_eq!(round_budget(&c(0.1, 32), 11), 2);
        assert_eq!(round_budget(&c(1.0, 32), 100), 32);
        assert_eq!(round_budget(&c(0.0, 32), 50), 0);
        assert_eq!(round_budget(&c(0.5, 32), 0), 0);
    }

    #[test]
    fn first_flip_lands_on_the_smallest_gap() {
        let guide = TableGaps(vec![0.8, 0.1, 0.5]);
        let config = ExploreConfig { rho: 1.0, t_max: 1 };
        let (result, trace) =
            explore_with_trace(&ThreeStepEnv, &NeverInline, &guide, &ctx(0), &config);
        assert_eq!(result.flip_steps, vec![1]);
        assert_eq!(trace[1].steps[1].action, Action::Inline);
        assert_eq!(trace[1].steps[0].action, Action::Keep);
        assert_eq!(result.best.size, 13.0);
        assert!(result.improved);
    }

    #[test]
    fn gap_ties_resolve_to_the_earliest_step() {
        let config = ExploreConfig { rho: 1.0, t_max: 1 };
        let (result, _) =
            explore_with_trace(&ThreeStepEnv, &NeverInline, &UniformGap, &ctx(0), &config);
        assert_eq!(result.flip_steps, vec![0]);
    }

    /// One root calling one small function; inlining beats keeping by 1.
    fn toy_graph() -> ModuleGraph {
        ModuleGraph {
            functions: vec![
                FunctionNode {
                    id: 0,
                    base_size: 10.0,
                    is_root: true,
                },
                FunctionNode {
                    id: 1,
                    base_size: 4.0,
                    is_root: false,
                },
            ],
            callsites: vec![Callsite { caller: 0, callee: 1 }],
        }
    }

    struct FixedGraphEnv {
        graph: ModuleGraph,
        params: EnvParams,
    }

    impl Environment for FixedGraphEnv {
        fn feature_dim(&self) -> usize {
            crate::sim::FEATURE_DIM
        }

        fn run_with(
            &self,
            ctx: &Context,
            act: &mut dyn FnMut(usize, &StateFeatures) -> Action,
        ) -> Trajectory {
            let mut state = SimState::new(&self.graph, &self.params);
            let mut steps = Vec::new();
            let mut h = 0;
            while !state.is_terminal() {
                let features = state.head_features().expect("non-terminal state has a head");
                let action = act(h, &features);
                state.step(action).expect("non-terminal state accepts a step");
                steps.push(crate::mdp::TrajectoryStep { features, action });
                h += 1;
            }
            Trajectory {
                context_id: ctx.id,
                policy_id: 0,
                steps,
                size: state.final_size(),
            }
        }
    }

    #[test]
    fn one_round_discovers_the_profitable_inline() {
        let env = FixedGraphEnv {
            graph: toy_graph(),
            params: EnvParams::default(),
        };
        let config = ExploreConfig { rho: 0.1, t_max: 32 };
        let vanilla = rollout(&env, &NeverInline, &ctx(3));
        assert_eq!(vanilla.size, 14.0);
        assert_eq!(round_budget(&config, vanilla.steps.len()), 1);

        let result = explore_module(&env, &NeverInline, &UniformGap, &ctx(3), &config);
        assert_eq!(result.best.size, 13.0);
        assert_eq!(result.best.steps[0].action, Action::Inline);
        assert_eq!(result.flip_steps, vec![0]);
    }

    #[test]
    fn never_worse_with_increasing_flips_on_generated_modules() {
        let env = InlineSim::new(EnvParams::default()).unwrap();
        let guide = PolicyParams::init(crate::sim::FEATURE_DIM, 16, 11).unwrap();
        let config = ExploreConfig { rho: 0.3, t_max: 8 };
        for seed in 0..40u64 {
            let ctx = Context { id: seed, seed };
            let vanilla = rollout(&env, &SmallCallee { threshold: 6.0 }, &ctx);
            let (result, trace) = explore_with_trace(
                &env,
                &SmallCallee { threshold: 6.0 },
                &guide,
                &ctx,
                &config,
            );
            assert!(result.best.size <= vanilla.size);
            assert_eq!(result.vanilla_size, vanilla.size);
            assert!(result.flip_steps.len() <= round_budget(&config, vanilla.steps.len()));
            assert!(result.flip_steps.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(trace.len(), result.flip_steps.len() + 1);
            assert_eq!(result.improved, result.best.size < vanilla.size);
        }
    }

    #[test]
    fn consecutive_rounds_agree_before_the_flip() {
        let env = InlineSim::new(EnvParams::default()).unwrap();
        let guide = PolicyParams::init(crate::sim::FEATURE_DIM, 16, 5).unwrap();
        let config = ExploreConfig { rho: 1.0, t_max: 6 };
        for seed in 0..15u64 {
            let ctx = Context { id: seed, seed };
            let (result, trace) =
                explore_with_trace(&env, &NeverInline, &guide, &ctx, &config);
            for (t, &flip) in result.flip_steps.iter().enumerate() {
                let before = &trace[t];
                let after = &trace[t + 1];
                assert_eq!(before.steps[..flip], after.steps[..flip]);
                assert_eq!(
                    after.steps[flip].action,
                    before.steps[flip].action.flip()
                );
            }
        }
    }
}
