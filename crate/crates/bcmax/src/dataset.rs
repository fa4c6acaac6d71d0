//! Trajectory collection and the best-per-context dataset.
//!
//! Collection rolls every roster policy on every context and keeps all
//! trajectories, marking per context the one with the smallest size (highest
//! reward). Files are JSON lines, one context record per line; floats are
//! serialized losslessly so save/load round-trips bit-exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, Context, Environment, Policy, Trajectory, TrajectoryStep};
use crate::par;

/// All trajectories collected for one context plus the index of the best.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub context_id: u64,
    pub trajectories: Vec<Trajectory>,
    pub best_index: usize,
}

impl DatasetRecord {
    pub fn new(context_id: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        let best_index = select_best(&trajectories)?;
        Ok(DatasetRecord {
            context_id,
            trajectories,
            best_index,
        })
    }

    pub fn best(&self) -> &Trajectory {
        &self.trajectories[self.best_index]
    }

    pub fn best_size(&self) -> f64 {
        self.best().size
    }
}

/// Index of the smallest-size trajectory; ties resolve to the lowest index.
pub fn select_best(trajectories: &[Trajectory]) -> Result<usize> {
    if trajectories.is_empty() {
        return Err(Error::usage("cannot select the best of zero trajectories"));
    }
    let mut best = 0;
    for (i, t) in trajectories.iter().enumerate().skip(1) {
        if t.size < trajectories[best].size {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn best_sizes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_size()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        let k = self.records.first().map(|r| r.trajectories.len());
        for r in &self.records {
            if !seen.insert(r.context_id) {
                return Err(Error::config(format!(
                    "duplicate record for context {}",
                    r.context_id
                )));
            }
            if Some(r.trajectories.len()) != k {
                return Err(Error::config(format!(
                    "context {} has {} trajectories, expected {}",
                    r.context_id,
                    r.trajectories.len(),
                    k.unwrap()
                )));
            }
            if r.best_index >= r.trajectories.len() {
                return Err(Error::config(format!(
                    "context {} best_index out of range",
                    r.context_id
                )));
            }
        }
        Ok(())
    }
}

/// Roll every policy on every context. Contexts are processed independently
/// (in parallel when enabled) and aggregated in context order.
pub fn collect(
    env: &(impl Environment + ?Sized),
    policies: &[&(dyn Policy + Sync)],
    contexts: &[Context],
) -> Result<Dataset> {
    if policies.is_empty() {
        return Err(Error::config("policy roster is empty"));
    }
    if contexts.is_empty() {
        return Err(Error::config("context set is empty"));
    }
    let records: Vec<Result<DatasetRecord>> = par::map_ordered(contexts, |ctx| {
        let trajectories = policies
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut t = rollout(env, *p, ctx);
                t.policy_id = i as u64;
                t
            })
            .collect();
        DatasetRecord::new(ctx.id, trajectories)
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { records })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryWire {
    policy_id: u64,
    size: f64,
    steps: Vec<TrajectoryStep>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    context_id: u64,
    policies: Vec<TrajectoryWire>,
    best_index: usize,
}

/// Write a dataset as JSON lines, one context record per line.
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in &dataset.records {
        let wire = RecordWire {
            context_id: r.context_id,
            policies: r
                .trajectories
                .iter()
                .map(|t| TrajectoryWire {
                    policy_id: t.policy_id,
                    size: t.size,
                    steps: t.steps.clone(),
                })
                .collect(),
            best_index: r.best_index,
        };
        serde_json::to_writer(&mut out, &wire)
            .map_err(|e| Error::config(format!("dataset serialization failed: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset from JSON lines, validating each record.
pub fn load(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let trajectories: Vec<Trajectory> = wire
            .policies
            .into_iter()
            .map(|t| Trajectory {
                context_id: wire.context_id,
                policy_id: t.policy_id,
                steps: t.steps,
                size: t.size,
            })
            .collect();
        for t in &trajectories {
            if !t.size.is_finite() || t.size < 0.0 {
                return Err(Error::parse(
                    i + 1,
                    format!("trajectory size {} is invalid", t.size),
                ));
            }
            if t.steps.iter().any(|s| !s.features.is_finite()) {
                return Err(Error::parse(i + 1, "non-finite feature value"));
            }
        }
        let expected = select_best(&trajectories).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if wire.best_index != expected {
            return Err(Error::parse(
                i + 1,
                format!(
                    "best_index {} does not match the smallest size (index {expected})",
                    wire.best_index
                ),
            ));
        }
        records.push(DatasetRecord {
            context_id: wire.context_id,
            trajectories,
            best_index: wire.best_index,
        });
    }
    let dataset = Dataset { records };
    dataset.validate()?;
    Ok(dataset)
}
