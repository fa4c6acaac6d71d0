//! Regret evaluation, indistinguishability fixtures, and savings reports.
//!
//! Regret compares a policy against the per-context best of a baseline
//! roster (values are negated sizes, so the gap per context is the policy's
//! size minus the best baseline size; it can be negative when the policy
//! wins). The two fixture constructions are small enumerable environments
//! where trajectory-level feedback provably cannot identify the better
//! action: paired reward tables that generate byte-identical datasets yet
//! rank candidate policies oppositely.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{AlwaysInline, NeverInline};
use crate::dataset;
use crate::error::{Error, Result};
use crate::mdp::{rollout, Action, Context, Environment, Policy, StateFeatures, Trajectory};
use crate::par;
use crate::pipeline::{load_manifests, RunConfig};
use crate::policy::PolicyParams;
use crate::trainer::{build_examples, train, TrainConfig};
use crate::weighting::uniform_weights;

/// One context's contribution to the regret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRegret {
    pub context_id: u64,
    /// Best baseline value: minus the smallest baseline size.
    pub best_value: f64,
    /// Minus the evaluated policy's size.
    pub policy_value: f64,
    /// best_value - policy_value; negative when the policy beats them all.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub per_context: Vec<ContextRegret>,
    pub mean_regret: f64,
    /// Name of the baseline used for the savings column.
    pub reference: String,
    /// Mean of (reference size - policy size); positive means smaller output.
    pub mean_savings_vs_reference: f64,
}

/// Exact per-context regret of `policy` against the best of `baselines`.
pub fn regret(
    env: &(impl Environment + ?Sized),
    policy: &(dyn Policy + Sync),
    baselines: &[(&str, &(dyn Policy + Sync))],
    contexts: &[Context],
) -> Result<RegretReport> {
    if baselines.is_empty() {
        return Err(Error::usage("regret needs at least one baseline"));
    }
    if contexts.is_empty() {
        return Err(Error::usage("regret needs at least one context"));
    }
    let rows: Vec<(ContextRegret, f64)> = par::map_ordered(contexts, |ctx| {
        let policy_size = rollout(env, policy, ctx).size;
        let mut best_size = f64::INFINITY;
        for (_, b) in baselines {
            best_size = best_size.min(rollout(env, *b, ctx).size);
        }
        let reference_size = rollout(env, baselines[0].1, ctx).size;
        (
            ContextRegret {
                context_id: ctx.id,
                best_value: -best_size,
                policy_value: -policy_size,
                gap: policy_size - best_size,
            },
            reference_size - policy_size,
        )
    });
    let n = rows.len() as f64;
    let mean_regret = rows.iter().map(|(r, _)| r.gap).sum::<f64>() / n;
    let mean_savings = rows.iter().map(|(_, s)| s).sum::<f64>() / n;
    Ok(RegretReport {
        per_context: rows.into_iter().map(|(r, _)| r).collect(),
        mean_regret,
        reference: baselines[0].0.to_string(),
        mean_savings_vs_reference: mean_savings,
    })
}

/// Mean gap between policy sizes and per-context best sizes, for callers
/// that already hold both columns (e.g. from a stored dataset).
pub fn regret_against_best(best_sizes: &[f64], policy_sizes: &[f64]) -> Result<f64> {
    if best_sizes.is_empty() || best_sizes.len() != policy_sizes.len() {
        return Err(Error::usage(format!(
            "size columns must be nonempty and equal length, got {} and {}",
            best_sizes.len(),
            policy_sizes.len()
        )));
    }
    let total: f64 = policy_sizes
        .iter()
        .zip(best_sizes)
        .map(|(p, b)| p - b)
        .sum();
    Ok(total / best_sizes.len() as f64)
}

/// A fully enumerated episodic environment: a reward per (context, complete
/// action sequence). Sizes are 1 - reward, so smaller stays better and all
/// sizes are nonnegative.
///
/// The standard binary interface maps Keep to action 0 and Inline to action
/// 1; tables may also hold rows for an action 2 that only the enumeration
/// helpers reach, never a binary rollout.
#[derive(Debug, Clone)]
pub struct FixtureEnv {
    pub name: String,
    pub horizon: usize,
    pub n_contexts: usize,
    rewards: BTreeMap<(u64, Vec<u8>), f64>,
}

impl FixtureEnv {
    pub fn new(
        name: impl Into<String>,
        horizon: usize,
        n_contexts: usize,
        entries: Vec<((u64, Vec<u8>), f64)>,
    ) -> Result<Self> {
        if horizon == 0 || n_contexts == 0 {
            return Err(Error::config("fixture needs horizon >= 1 and contexts >= 1"));
        }
        let mut rewards = BTreeMap::new();
        for ((ctx, seq), r) in entries {
            if ctx >= n_contexts as u64 || seq.len() != horizon {
                return Err(Error::config(format!(
                    "reward row (context {ctx}, sequence length {}) is out of shape",
                    seq.len()
                )));
            }
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("rewards must lie in [0, 1], got {r}")));
            }
            rewards.insert((ctx, seq), r);
        }
        Ok(FixtureEnv {
            name: name.into(),
            horizon,
            n_contexts,
            rewards,
        })
    }

    pub fn contexts(&self) -> Vec<Context> {
        (0..self.n_contexts as u64)
            .map(|id| Context { id, seed: id })
            .collect()
    }

    pub fn reward(&self, context_id: u64, actions: &[u8]) -> Result<f64> {
        self.rewards
            .get(&(context_id, actions.to_vec()))
            .copied()
            .ok_or_else(|| {
                Error::usage(format!(
                    "no reward row for context {context_id}, actions {actions:?}"
                ))
            })
    }

    /// Largest reward any complete action sequence achieves on a context.
    pub fn best_covered_reward(&self, context_id: u64) -> Result<f64> {
        self.rewards
            .iter()
            .filter(|((c, _), _)| *c == context_id)
            .map(|(_, r)| *r)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
            .ok_or_else(|| Error::usage(format!("context {context_id} has no reward rows")))
    }
}

impl Environment for FixtureEnv {
    fn feature_dim(&self) -> usize {
        2
    }

    fn run_with(
        &self,
        ctx: &Context,
        actor: &mut dyn FnMut(usize, &StateFeatures) -> Action,
    ) -> Trajectory {
        let mut steps = Vec::with_capacity(self.horizon);
        let mut sequence = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let features = StateFeatures(vec![ctx.id as f64, h as f64]);
            let action = actor(h, &features);
            sequence.push(action.index() as u8);
            steps.push(crate::mdp::TrajectoryStep { features, action });
        }
        let reward = self
            .reward(ctx.id, &sequence)
            .expect("fixture table covers every binary sequence");
        Trajectory {
            context_id: ctx.id,
            policy_id: 0,
            steps,
            size: 1.0 - reward,
        }
    }
}

/// A candidate policy for the bandit fixture: one of three actions per
/// context, evaluated by table lookup only.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBandit {
    pub name: String,
    pub actions: Vec<u8>,
}

/// Exact regret of a tabular candidate against the always-action-0 baseline.
pub fn bandit_regret(env: &FixtureEnv, candidate: &TabularBandit) -> Result<f64> {
    if candidate.actions.len() != env.n_contexts {
        return Err(Error::usage(format!(
            "candidate covers {} contexts, fixture has {}",
            candidate.actions.len(),
            env.n_contexts
        )));
    }
    let mut total = 0.0;
    for (x, &a) in candidate.actions.iter().enumerate() {
        let base = env.reward(x as u64, &[0])?;
        let chosen = env.reward(x as u64, &[a])?;
        total += base - chosen;
    }
    Ok(total / env.n_contexts as f64)
}

pub struct BanditFixture {
    pub env_r1: FixtureEnv,
    pub env_r2: FixtureEnv,
    pub m: usize,
    pub candidates: [TabularBandit; 2],
}

/// Horizon-1 construction with M contexts and three actions. Action 0 pays 1
/// everywhere in both tables; actions 1 and 2 pay (0, 1) under the first
/// table and (1, 0) under the second. A dataset logged under the action-0
/// baseline is therefore identical for both tables, while the two candidate
/// policies (which deviate to action 1 resp. 2 on context 0) have opposite
/// regrets.
pub fn build_bandit_fixture(m: usize) -> Result<BanditFixture> {
    if m < 2 {
        return Err(Error::usage(format!("bandit fixture needs M >= 2, got {m}")));
    }
    let mut rows_r1 = Vec::new();
    let mut rows_r2 = Vec::new();
    for x in 0..m as u64 {
        rows_r1.push(((x, vec![0u8]), 1.0));
        rows_r1.push(((x, vec![1u8]), 0.0));
        rows_r1.push(((x, vec![2u8]), 1.0));
        rows_r2.push(((x, vec![0u8]), 1.0));
        rows_r2.push(((x, vec![1u8]), 1.0));
        rows_r2.push(((x, vec![2u8]), 0.0));
    }
    let mut pi_1 = vec![0u8; m];
    pi_1[0] = 1;
    let mut pi_2 = vec![0u8; m];
    pi_2[0] = 2;
    Ok(BanditFixture {
        env_r1: FixtureEnv::new("bandit-r1", 1, m, rows_r1)?,
        env_r2: FixtureEnv::new("bandit-r2", 1, m, rows_r2)?,
        m,
        candidates: [
            TabularBandit {
                name: "pi_1".into(),
                actions: pi_1,
            },
            TabularBandit {
                name: "pi_2".into(),
                actions: pi_2,
            },
        ],
    })
}

pub struct CoverageFixture {
    pub env_r1: FixtureEnv,
    pub env_r2: FixtureEnv,
}

/// Horizon-2 construction on a single context. Both constant baselines score
/// 0.5 under both tables, so their logs never separate the environments,
/// while the best sequence in each environment scores 1 and is never logged.
pub fn build_coverage_fixture() -> Result<CoverageFixture> {
    let r1 = vec![
        ((0u64, vec![0u8, 0u8]), 0.5),
        ((0u64, vec![0u8, 1u8]), 1.0),
        ((0u64, vec![1u8, 0u8]), 0.0),
        ((0u64, vec![1u8, 1u8]), 0.5),
    ];
    let r2 = r1
        .iter()
        .map(|((c, s), r)| ((*c, s.clone()), 1.0 - r))
        .collect();
    Ok(CoverageFixture {
        env_r1: FixtureEnv::new("coverage-r1", 2, 1, r1)?,
        env_r2: FixtureEnv::new("coverage-r2", 2, 1, r2)?,
    })
}

/// Everything the fixture run demonstrates, in checkable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureVerdict {
    pub bandit_m: usize,
    pub bandit_datasets_identical: bool,
    pub bandit_checkpoints_identical: bool,
    /// Regret of candidate i under table j.
    pub bandit_regrets: [[f64; 2]; 2],
    pub coverage_datasets_identical: bool,
    /// Reward observed by (baseline, table).
    pub coverage_observed: [[f64; 2]; 2],
    pub coverage_best_covered: [f64; 2],
    pub coverage_benchmark: [f64; 2],
}

/// Run both fixtures end to end, writing the four datasets into `work_dir`
/// and training real checkpoints on the bandit pair.
pub fn run_fixtures(work_dir: &Path) -> Result<FixtureVerdict> {
    std::fs::create_dir_all(work_dir)?;

    let bandit = build_bandit_fixture(4)?;
    let baseline: Vec<(&str, &(dyn Policy + Sync))> = vec![("never", &NeverInline)];
    let contexts = bandit.env_r1.contexts();
    let roster: Vec<&(dyn Policy + Sync)> = vec![baseline[0].1];

    let ds1 = dataset::collect(&bandit.env_r1, &roster, &contexts)?;
    let ds2 = dataset::collect(&bandit.env_r2, &roster, &contexts)?;
    let p1 = work_dir.join("bandit_r1.jsonl");
    let p2 = work_dir.join("bandit_r2.jsonl");
    dataset::save(&ds1, &p1)?;
    dataset::save(&ds2, &p2)?;
    let bandit_datasets_identical = std::fs::read(&p1)? == std::fs::read(&p2)?;

    let tcfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let ex1 = build_examples(&ds1, &uniform_weights(ds1.records.len()))?;
    let ex2 = build_examples(&ds2, &uniform_weights(ds2.records.len()))?;
    let (params1, _) = train(&ex1, &tcfg)?;
    let (params2, _) = train(&ex2, &tcfg)?;
    params1.save(&work_dir.join("bandit_r1_policy.json"))?;
    params2.save(&work_dir.join("bandit_r2_policy.json"))?;
    let bandit_checkpoints_identical = params1 == params2;

    let mut bandit_regrets = [[0.0; 2]; 2];
    for (i, candidate) in bandit.candidates.iter().enumerate() {
        bandit_regrets[i][0] = bandit_regret(&bandit.env_r1, candidate)?;
        bandit_regrets[i][1] = bandit_regret(&bandit.env_r2, candidate)?;
    }

    let coverage = build_coverage_fixture()?;
    let cov_roster: Vec<&(dyn Policy + Sync)> = vec![&NeverInline, &AlwaysInline];
    let cov_contexts = coverage.env_r1.contexts();
    let cds1 = dataset::collect(&coverage.env_r1, &cov_roster, &cov_contexts)?;
    let cds2 = dataset::collect(&coverage.env_r2, &cov_roster, &cov_contexts)?;
    let c1 = work_dir.join("coverage_r1.jsonl");
    let c2 = work_dir.join("coverage_r2.jsonl");
    dataset::save(&cds1, &c1)?;
    dataset::save(&cds2, &c2)?;
    let coverage_datasets_identical = std::fs::read(&c1)? == std::fs::read(&c2)?;

    let mut coverage_observed = [[0.0; 2]; 2];
    for (j, env) in [&coverage.env_r1, &coverage.env_r2].into_iter().enumerate() {
        coverage_observed[0][j] = rollout(env, &NeverInline, &cov_contexts[0]).reward() + 1.0;
        coverage_observed[1][j] = rollout(env, &AlwaysInline, &cov_contexts[0]).reward() + 1.0;
    }
    let coverage_best_covered = [
        coverage.env_r1.best_covered_reward(0)?,
        coverage.env_r2.best_covered_reward(0)?,
    ];
    let coverage_benchmark = [
        coverage_observed[0][0].max(coverage_observed[1][0]),
        coverage_observed[0][1].max(coverage_observed[1][1]),
    ];

    Ok(FixtureVerdict {
        bandit_m: bandit.m,
        bandit_datasets_identical,
        bandit_checkpoints_identical,
        bandit_regrets,
        coverage_datasets_identical,
        coverage_observed,
        coverage_best_covered,
        coverage_benchmark,
    })
}

pub const SAVINGS_HEADER: &str = "iteration,policy_sum,oracle_sum,savings";

/// Build the savings-per-iteration table for a completed run directory.
///
/// Row 0 is the reference: the per-module best of the initial roster (with a
/// one-policy roster, simply that baseline's corpus sum), with savings 0.
/// Later rows recompute each checkpoint's corpus sum from scratch and cross-
/// check it against the manifest; savings are relative to the reference.
pub fn savings_report(run_dir: &Path) -> Result<String> {
    let config_text = std::fs::read_to_string(run_dir.join("run_config.json"))?;
    let config: RunConfig = serde_json::from_str(&config_text)
        .map_err(|e| Error::config(format!("bad run_config.json: {e}")))?;
    let manifests = load_manifests(run_dir)?;

    let env = crate::sim::InlineSim::new(config.corpus.env.clone())?;
    let contexts = config.corpus.contexts();
    let reference_sum = manifests[0].roster_oracle_sum;

    let mut lines = vec![SAVINGS_HEADER.to_string()];
    lines.push(format!("0,{reference_sum},{reference_sum},0"));
    for manifest in &manifests {
        let checkpoint = run_dir.join(&manifest.checkpoint_path);
        let params = PolicyParams::load(&checkpoint).map_err(|e| {
            Error::config(format!(
                "iteration {}: cannot load checkpoint: {e}",
                manifest.iteration
            ))
        })?;
        let sizes: Vec<f64> = par::map_ordered(&contexts, |ctx| rollout(&env, &params, ctx).size);
        let policy_sum: f64 = sizes.iter().sum();
        if policy_sum != manifest.policy_sum {
            return Err(Error::config(format!(
                "iteration {}: recomputed policy sum {} does not match manifest {}",
                manifest.iteration, policy_sum, manifest.policy_sum
            )));
        }
        let savings = reference_sum - policy_sum;
        lines.push(format!(
            "{},{policy_sum},{},{savings}",
            manifest.iteration, manifest.oracle_sum
        ));
    }
    Ok(lines.join("\n") + "\n")
}
