//! Minibatch SGD on the weighted cross-entropy surrogate.
//!
//! Training imitates, per context, the single best trajectory found by any
//! policy in the roster. Every step of that trajectory becomes a classified
//! example carrying the module's weight, and the MLP is fit by plain SGD
//! with a deterministic per-epoch shuffle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::context_seed;
use crate::policy::{PolicyParams, WeightedExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 64,
            hidden_width: 16,
            shuffle_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::config(
                "epochs, batch_size and hidden_width must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// Post-training summary on the full training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Weighted cross-entropy sum after the final update.
    pub final_loss: f64,
    /// Unweighted mean cross-entropy after the final update.
    pub final_mean_ce: f64,
    /// Fraction of examples where the greedy action disagrees with the label.
    pub mismatch_rate: f64,
    /// Weighted loss summed over each epoch's batches, before that epoch's
    /// updates have all landed; useful as a coarse convergence curve.
    pub epoch_losses: Vec<f64>,
    pub n_examples: usize,
}

/// Flatten a dataset into imitation examples: every step of each record's
/// best trajectory, carrying that record's weight. Record order and step
/// order are preserved.
pub fn build_examples(dataset: &Dataset, weights: &[f64]) -> Result<Vec<WeightedExample>> {
    if weights.len() != dataset.records.len() {
        return Err(Error::usage(format!(
            "{} weights for {} records",
            weights.len(),
            dataset.records.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::usage("example weights must be finite and positive"));
    }
    let mut examples = Vec::new();
    for (record, &weight) in dataset.records.iter().zip(weights) {
        for step in &record.best().steps {
            examples.push(WeightedExample {
                features: step.features.clone(),
                action: step.action,
                weight,
            });
        }
    }
    Ok(examples)
}

/// Train a fresh policy on weighted examples.
///
/// Batches use the mean gradient, so the step scale is independent of batch
/// size. The shuffle is re-seeded per epoch from `shuffle_seed`, making runs
/// bitwise reproducible regardless of how many epochs execute.
pub fn train(examples: &[WeightedExample], config: &TrainConfig) -> Result<(PolicyParams, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::usage("cannot train on an empty example set"));
    }
    let input_dim = examples[0].features.dim();
    if examples.iter().any(|e| e.features.dim() != input_dim) {
        return Err(Error::usage("examples have inconsistent feature dimensions"));
    }

    let mut params = PolicyParams::init(input_dim, config.hidden_width, config.init_seed)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(context_seed(config.shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = params
                .loss_and_grad_iter(batch.iter().map(|&i| &examples[i]))
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::numeric(format!("training diverged in epoch {}: {msg}", epoch + 1))
                    }
                    other => other,
                })?;
            epoch_loss += loss;
            let scale = config.learning_rate / batch.len() as f64;
            for (v, g) in params.values.iter_mut().zip(&grad) {
                *v -= scale * g;
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::numeric(format!(
                "training diverged in epoch {}: epoch loss is not finite",
                epoch + 1
            )));
        }
        epoch_losses.push(epoch_loss);
    }

    let (final_loss, _) = params.loss_and_grad(examples)?;
    let report = TrainReport {
        final_loss,
        final_mean_ce: mean_ce(&params, examples)?,
        mismatch_rate: mismatch_rate(&params, examples)?,
        epoch_losses,
        n_examples: examples.len(),
    };
    Ok((params, report))
}

/// Unweighted mean cross-entropy of the labels under the policy.
pub fn mean_ce(params: &PolicyParams, examples: &[WeightedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::usage("mean_ce needs at least one example"));
    }
    let mut total = 0.0;
    for ex in examples {
        let (p0, p1) = params.action_dist(&ex.features)?;
        let p = match ex.action {
            crate::mdp::Action::Keep => p0,
            crate::mdp::Action::Inline => p1,
        };
        total += -(p.max(f64::MIN_POSITIVE)).ln();
    }
    Ok(total / examples.len() as f64)
}

/// Fraction of examples where the greedy action differs from the label.
pub fn mismatch_rate(params: &PolicyParams, examples: &[WeightedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::usage("mismatch_rate needs at least one example"));
    }
    let mut misses = 0usize;
    for ex in examples {
        if params.greedy_action(&ex.features)? != ex.action {
            misses += 1;
        }
    }
    Ok(misses as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Action, StateFeatures};

    fn threshold_examples(n: usize, boundary: f64) -> Vec<WeightedExample> {
        (0..n)
            .map(|i| {
                let size = 1.0 + (i % 12) as f64;
                WeightedExample {
                    features: StateFeatures(vec![
                        size,
                        10.0,
                        1.0 + (i % 3) as f64,
                        (i % 4) as f64,
                        1.0,
                        (11.0f64).ln(),
                    ]),
                    action: if size <= boundary {
                        Action::Inline
                    } else {
                        Action::Keep
                    },
                    weight: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let examples = threshold_examples(300, 6.0);
        let config = TrainConfig::default();
        let (a, ra) = train(&examples, &config).unwrap();
        let (b, rb) = train(&examples, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn learns_a_threshold_rule() {
        let examples = threshold_examples(480, 6.0);
        let (params, report) = train(&examples, &TrainConfig::default()).unwrap();
        assert!(report.mismatch_rate <= 0.02, "mismatch {}", report.mismatch_rate);
        assert_eq!(mismatch_rate(&params, &examples).unwrap(), report.mismatch_rate);
        assert!(report.epoch_losses.len() == 30);
        assert!(report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap());
    }

    #[test]
    fn constant_labels_drive_ce_down() {
        let examples: Vec<WeightedExample> = threshold_examples(200, 0.0);
        assert!(examples.iter().all(|e| e.action == Action::Keep));
        let (_, report) = train(&examples, &TrainConfig::default()).unwrap();
        assert!(report.mismatch_rate == 0.0);
        assert!(report.final_mean_ce < 0.1, "mean ce {}", report.final_mean_ce);
    }

    #[test]
    fn doubled_weights_and_halved_rate_give_identical_params() {
        let examples = threshold_examples(300, 6.0);
        let doubled: Vec<WeightedExample> = examples
            .iter()
            .cloned()
            .map(|mut e| {
                e.weight *= 2.0;
                e
            })
            .collect();
        let base = TrainConfig::default();
        let half = TrainConfig {
            learning_rate: base.learning_rate / 2.0,
            ..base.clone()
        };
        let (pa, ra) = train(&examples, &base).unwrap();
        let (pb, rb) = train(&doubled, &half).unwrap();
        assert_eq!(pa.values, pb.values);
        assert_eq!(rb.final_loss, 2.0 * ra.final_loss);
        assert_eq!(ra.mismatch_rate, rb.mismatch_rate);
    }

    #[test]
    fn mean_ce_dominates_scaled_mismatch() {
        // Pointwise: a mismatch means the label's probability is at most 1/2,
        // so its cross-entropy term is at least ln 2.
        let mut examples = threshold_examples(240, 6.0);
        for (i, ex) in examples.iter_mut().enumerate() {
            if i % 5 == 0 {
                ex.action = ex.action.flip();
            }
        }
        let (params, report) = train(&examples, &TrainConfig::default()).unwrap();
        assert!(report.final_mean_ce >= std::f64::consts::LN_2 * report.mismatch_rate);
        let ce = mean_ce(&params, &examples).unwrap();
        let mm = mismatch_rate(&params, &examples).unwrap();
        assert!(ce >= std::f64::consts::LN_2 * mm);
    }

    #[test]
    fn divergence_names_the_epoch() {
        // Zero features leave only the tiny init biases in the logits, so each
        // example costs at least ln(1/0.55) nats; four of them at weight
        // f64::MAX / 2 overflow the batch loss in the very first epoch.
        let examples: Vec<WeightedExample> = (0..4)
            .map(|_| WeightedExample {
                features: StateFeatures(vec![0.0, 0.0]),
                action: Action::Keep,
                weight: f64::MAX / 2.0,
            })
            .collect();
        let config = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        match train(&examples, &config) {
            Err(Error::Numeric(msg)) => {
                assert!(msg.contains("epoch 1"), "message: {msg}");
            }
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_inconsistent_inputs_are_usage_errors() {
        assert!(matches!(
            train(&[], &TrainConfig::default()),
            Err(Error::Usage(_))
        ));
        let mixed = vec![
            WeightedExample {
                features: StateFeatures(vec![1.0, 2.0]),
                action: Action::Keep,
                weight: 1.0,
            },
            WeightedExample {
                features: StateFeatures(vec![1.0]),
                action: Action::Keep,
                weight: 1.0,
            },
        ];
        assert!(matches!(
            train(&mixed, &TrainConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn examples_follow_best_trajectories_and_share_record_weights() {
        use crate::dataset::{Dataset, DatasetRecord};
        use crate::mdp::{Trajectory, TrajectoryStep};

        let step = |v: f64, a: Action| TrajectoryStep {
            features: StateFeatures(vec![v, 0.0]),
            action: a,
        };
        let traj = |cid: u64, pid: u64, size: f64, steps: Vec<TrajectoryStep>| Trajectory {
            context_id: cid,
            policy_id: pid,
            steps,
            size,
        };
        let dataset = Dataset {
            records: vec![
                DatasetRecord::new(
                    0,
                    vec![
                        traj(0, 0, 5.0, vec![step(1.0, Action::Keep)]),
                        traj(0, 1, 3.0, vec![step(2.0, Action::Inline), step(3.0, Action::Keep)]),
                    ],
                )
                .unwrap(),
                DatasetRecord::new(1, vec![traj(1, 0, 9.0, vec![step(4.0, Action::Inline)])])
                    .unwrap(),
            ],
        };

        let examples = build_examples(&dataset, &[2.0, 7.0]).unwrap();
        assert_eq!(examples.len(), 3);
        assert_eq!(examples[0].features.0[0], 2.0);
        assert_eq!(examples[0].action, Action::Inline);
        assert_eq!(examples[0].weight, 2.0);
        assert_eq!(examples[1].features.0[0], 3.0);
        assert_eq!(examples[1].weight, 2.0);
        assert_eq!(examples[2].features.0[0], 4.0);
        assert_eq!(examples[2].weight, 7.0);

        assert!(matches!(
            build_examples(&dataset, &[1.0]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            build_examples(&dataset, &[1.0, 0.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
    }
}
