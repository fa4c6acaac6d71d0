//! Iterative imitation: collect with exploration, keep the best trajectory
//! per context, weight, train, then feed the trained policy back into the
//! roster and repeat.
//!
//! Every iteration writes its dataset, checkpoint and a manifest under
//! `iter_NN/` in the output directory, so a finished run can be audited or
//! re-evaluated without recomputing anything. Collection is parallel across
//! contexts; training is sequential; reruns with the same config are
//! byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineSpec;
use crate::dataset::{self, Dataset, DatasetRecord};
use crate::error::{Error, Result};
use crate::explorer::{explore_module, ExploreConfig, UniformGap};
use crate::mdp::{rollout, Context, CorpusSpec, Policy, StochasticPolicy};
use crate::par;
use crate::policy::PolicyParams;
use crate::sim::InlineSim;
use crate::trainer::{build_examples, train, TrainConfig, TrainReport};
use crate::weighting::{
    bucket_index, bucket_weights, hedge_init, hedge_update, uniform_weights, weights_from_state,
    WeightingMode, WeightingState, DEFAULT_ETA, DEFAULT_WEIGHT_CAP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightingConfig {
    pub mode: WeightingMode,
    pub eta: f64,
    pub weight_cap: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            mode: WeightingMode::Uniform,
            eta: DEFAULT_ETA,
            weight_cap: DEFAULT_WEIGHT_CAP,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.weight_cap >= 1.0) {
            return Err(Error::config(format!(
                "weight_cap must be at least 1, got {}",
                self.weight_cap
            )));
        }
        Ok(())
    }
}

/// Full description of an iterative run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub roster: Vec<BaselineSpec>,
    pub iterations: usize,
    #[serde(default)]
    pub explore: ExploreConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub weighting: WeightingConfig,
    /// Keep only the last `m` learned policies in the roster; the initial
    /// baselines are always retained. Default: keep every learned policy.
    #[serde(default)]
    pub keep_last: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.roster.is_empty() {
            return Err(Error::config("initial roster must not be empty"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        self.explore.validate()?;
        self.train.validate()?;
        self.weighting.validate()
    }
}

/// Everything one iteration produced, with file paths relative to the run's
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationManifest {
    pub iteration: usize,
    /// Names of the policies that collected this iteration's dataset.
    pub roster: Vec<String>,
    pub dataset_path: String,
    pub checkpoint_path: String,
    pub n_contexts: usize,
    /// Sum over contexts of the best collected size (exploration included).
    pub best_sum: f64,
    /// Sum over contexts of the freshly trained policy's greedy sizes.
    pub policy_sum: f64,
    /// Sum over contexts of the per-context best unexplored size across the
    /// roster and the freshly trained policy. Never above policy_sum, and
    /// non-increasing across iterations under the default retention rule.
    pub oracle_sum: f64,
    /// Same, over the entering roster only. Iteration 1's value is the
    /// initial-roster reference that savings are measured against.
    pub roster_oracle_sum: f64,
    /// Number of (context, policy) explorations that beat their base rollout.
    pub explored_improvements: usize,
    pub weighting_mode: WeightingMode,
    /// Bucket distribution after this iteration's update (hedge mode only).
    pub weighting_state: Option<WeightingState>,
    pub train_report: TrainReport,
}

/// In-progress run: owns the environment, the growing roster and the
/// weighting state between iterations.
pub struct PipelineState {
    config: RunConfig,
    out_dir: PathBuf,
    env: InlineSim,
    contexts: Vec<Context>,
    baseline_names: Vec<String>,
    baselines: Vec<Box<dyn Policy + Send + Sync>>,
    learned: Vec<(String, PolicyParams)>,
    hedge: Option<WeightingState>,
    /// Best sizes from iteration 1; fixes each context's bucket for hedge.
    reference_sizes: Option<Vec<f64>>,
    manifests: Vec<IterationManifest>,
}

impl PipelineState {
    pub fn new(config: RunConfig, out_dir: &Path) -> Result<Self> {
        config.validate()?;
        let env = InlineSim::new(config.corpus.env.clone())?;
        let contexts = config.corpus.contexts();
        let baseline_names = config.roster.iter().map(|b| b.name()).collect();
        let baselines = config.roster.iter().map(|b| b.build()).collect();
        Ok(PipelineState {
            config,
            out_dir: out_dir.to_path_buf(),
            env,
            contexts,
            baseline_names,
            baselines,
            learned: Vec::new(),
            hedge: None,
            reference_sizes: None,
            manifests: Vec::new(),
        })
    }

    pub fn manifests(&self) -> &[IterationManifest] {
        &self.manifests
    }

    pub fn learned_count(&self) -> usize {
        self.learned.len()
    }

    /// The roster for the upcoming collection: initial baselines plus the
    /// retained learned policies, in acquisition order.
    fn roster_view(&self) -> Vec<(&str, &(dyn Policy + Sync))> {
        let mut roster: Vec<(&str, &(dyn Policy + Sync))> = self
            .baseline_names
            .iter()
            .zip(&self.baselines)
            .map(|(n, b)| (n.as_str(), b.as_ref() as &(dyn Policy + Sync)))
            .collect();
        let cut = match self.config.keep_last {
            Some(m) => self.learned.len().saturating_sub(m),
            None => 0,
        };
        for (name, params) in &self.learned[cut..] {
            roster.push((name.as_str(), params as &(dyn Policy + Sync)));
        }
        roster
    }

    /// Run one iteration end to end. On error (most likely training
    /// divergence) the state is left exactly as before the call and no files
    /// are written.
    pub fn run_iteration(&mut self) -> Result<IterationManifest> {
        let iteration = self.manifests.len() + 1;
        let roster = self.roster_view();
        let roster_names: Vec<String> = roster.iter().map(|(n, _)| n.to_string()).collect();
        let guide: &(dyn StochasticPolicy + Sync) = match self.learned.last() {
            Some((_, params)) => params,
            None => &UniformGap,
        };

        struct ContextOutcome {
            record: DatasetRecord,
            oracle_size: f64,
            improvements: usize,
        }

        let outcomes: Vec<Result<ContextOutcome>> = par::map_ordered(&self.contexts, |ctx| {
            let mut trajectories = Vec::with_capacity(roster.len());
            let mut oracle_size = f64::INFINITY;
            let mut improvements = 0;
            for (i, (_, policy)) in roster.iter().enumerate() {
                let explored = explore_module(&self.env, *policy, guide, ctx, &self.config.explore);
                oracle_size = oracle_size.min(explored.vanilla_size);
                if explored.improved {
                    improvements += 1;
                }
                let mut t = explored.best;
                t.policy_id = i as u64;
                trajectories.push(t);
            }
            Ok(ContextOutcome {
                record: DatasetRecord::new(ctx.id, trajectories)?,
                oracle_size,
                improvements,
            })
        });

        let mut records = Vec::with_capacity(outcomes.len());
        let mut roster_oracle_sizes = Vec::with_capacity(outcomes.len());
        let mut explored_improvements = 0;
        for outcome in outcomes {
            let outcome = outcome?;
            roster_oracle_sizes.push(outcome.oracle_size);
            explored_improvements += outcome.improvements;
            records.push(outcome.record);
        }
        let dataset = Dataset { records };
        let best_sizes = dataset.best_sizes();
        let best_sum: f64 = best_sizes.iter().sum();

        let weighting = &self.config.weighting;
        let (weights, hedge_pending) = match weighting.mode {
            WeightingMode::Uniform => (uniform_weights(best_sizes.len()), None),
            WeightingMode::Bucket => (bucket_weights(&best_sizes)?, None),
            WeightingMode::Hedge => {
                let (state, reference) = match (&self.hedge, &self.reference_sizes) {
                    (Some(s), Some(r)) => (s.clone(), r.clone()),
                    _ => (hedge_init(&best_sizes, weighting.eta)?, best_sizes.clone()),
                };
                let w = weights_from_state(&state, &reference, weighting.weight_cap)?;
                (w, Some((state, reference)))
            }
        };

        let examples = build_examples(&dataset, &weights)?;
        let (params, train_report) = train(&examples, &self.config.train)?;

        let policy_sizes: Vec<f64> =
            par::map_ordered(&self.contexts, |ctx| rollout(&self.env, &params, ctx).size);
        let policy_sum: f64 = policy_sizes.iter().sum();
        let roster_oracle_sum: f64 = roster_oracle_sizes.iter().sum();
        let oracle_sum: f64 = roster_oracle_sizes
            .iter()
            .zip(&policy_sizes)
            .map(|(r, p)| r.min(*p))
            .sum();

        let hedge_next = match hedge_pending {
            Some((state, reference)) => {
                let mut losses = vec![0.0; state.p.len()];
                for (size, r) in policy_sizes.iter().zip(&reference) {
                    losses[bucket_index(*r)?] += *size;
                }
                let next = hedge_update(&state, &losses)?;
                Some((next, reference))
            }
            None => None,
        };

        let iter_dir = self.out_dir.join(format!("iter_{iteration:02}"));
        std::fs::create_dir_all(&iter_dir)?;
        let dataset_rel = format!("iter_{iteration:02}/dataset.jsonl");
        let checkpoint_rel = format!("iter_{iteration:02}/policy.json");
        dataset::save(&dataset, &self.out_dir.join(&dataset_rel))?;
        params.save(&self.out_dir.join(&checkpoint_rel))?;

        let manifest = IterationManifest {
            iteration,
            roster: roster_names,
            dataset_path: dataset_rel,
            checkpoint_path: checkpoint_rel,
            n_contexts: self.contexts.len(),
            best_sum,
            policy_sum,
            oracle_sum,
            roster_oracle_sum,
            explored_improvements,
            weighting_mode: weighting.mode,
            weighting_state: hedge_next.as_ref().map(|(s, _)| s.clone()),
            train_report,
        };
        write_json(&iter_dir.join("manifest.json"), &manifest)?;

        self.learned.push((format!("learned-{iteration}"), params));
        if let Some((state, reference)) = hedge_next {
            self.hedge = Some(state);
            self.reference_sizes = Some(reference);
        }
        self.manifests.push(manifest.clone());
        Ok(manifest)
    }
}

/// Run a full iterative job into `out_dir`, writing the resolved config, one
/// `iter_NN/` directory per iteration, and returning the manifests in order.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<Vec<IterationManifest>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("run_config.json"), config)?;
    let mut state = PipelineState::new(config.clone(), out_dir)?;
    for _ in 0..config.iterations {
        state.run_iteration()?;
    }
    Ok(state.manifests)
}

/// Load the manifests of a completed run, checking that every referenced
/// file is present.
pub fn load_manifests(out_dir: &Path) -> Result<Vec<IterationManifest>> {
    let mut manifests = Vec::new();
    loop {
        let path = out_dir.join(format!("iter_{:02}/manifest.json", manifests.len() + 1));
        if !path.exists() {
            break;
        }
        let text = std::fs::read_to_string(&path)?;
        let manifest: IterationManifest = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad manifest {}: {e}", path.display())))?;
        if manifest.iteration != manifests.len() + 1 {
            return Err(Error::config(format!(
                "manifest {} claims iteration {}, expected {}",
                path.display(),
                manifest.iteration,
                manifests.len() + 1
            )));
        }
        for rel in [&manifest.dataset_path, &manifest.checkpoint_path] {
            if !out_dir.join(rel).exists() {
                return Err(Error::config(format!(
                    "iteration {}: referenced file {rel} is missing",
                    manifest.iteration
                )));
            }
        }
        manifests.push(manifest);
    }
    if manifests.is_empty() {
        return Err(Error::config(format!(
            "no iteration manifests under {}",
            out_dir.display()
        )));
    }
    Ok(manifests)
}

/// Write any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("serialization failed: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
