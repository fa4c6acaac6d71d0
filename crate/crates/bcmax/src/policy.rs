//! Differentiable softmax policy over two actions: a one-hidden-layer ReLU
//! MLP on raw state features, trained with a weighted cross-entropy surrogate
//! of the 0-1 imitation objective.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Policy, StateFeatures, StochasticPolicy};

const INIT_SCALE: f64 = 0.1;

/// A weighted imitation example: match `action` on `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExample {
    pub features: StateFeatures,
    pub action: Action,
    pub weight: f64,
}

/// MLP parameters with a flat value vector.
///
/// Layout: hidden weights (row per hidden unit, `input_dim` each), hidden
/// biases, output weights (row per logit, `hidden_width` each), output
/// biases. `param_count = d*h + h + 2*h + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub init_seed: u64,
    pub values: Vec<f64>,
}

pub fn param_count(input_dim: usize, hidden_width: usize) -> usize {
    input_dim * hidden_width + hidden_width + 2 * hidden_width + 2
}

impl PolicyParams {
    /// Fresh parameters drawn uniformly from [-0.1, 0.1].
    pub fn init(input_dim: usize, hidden_width: usize, init_seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_width == 0 {
            return Err(Error::config(
                "policy needs input_dim >= 1 and hidden_width >= 1",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let values = (0..param_count(input_dim, hidden_width))
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        Ok(PolicyParams {
            input_dim,
            hidden_width,
            init_seed,
            values,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != param_count(self.input_dim, self.hidden_width) {
            return Err(Error::config(format!(
                "parameter vector has {} entries, expected {}",
                self.values.len(),
                param_count(self.input_dim, self.hidden_width)
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::config("parameter vector has non-finite entries"));
        }
        Ok(())
    }

    fn slices(&self) -> (usize, usize, usize) {
        let (d, h) = (self.input_dim, self.hidden_width);
        (d * h, d * h + h, d * h + h + 2 * h)
    }

    fn forward(&self, x: &[f64]) -> ([f64; 2], Vec<f64>) {
        let (d, h) = (self.input_dim, self.hidden_width);
        let (b1_at, w2_at, b2_at) = self.slices();
        let v = &self.values;
        let mut hidden = vec![0.0; h];
        for i in 0..h {
            let mut z = v[b1_at + i];
            let row = &v[i * d..(i + 1) * d];
            for (w, xv) in row.iter().zip(x) {
                z += w * xv;
            }
            hidden[i] = if z > 0.0 { z } else { 0.0 };
        }
        let mut logits = [v[b2_at], v[b2_at + 1]];
        for o in 0..2 {
            let row = &v[w2_at + o * h..w2_at + (o + 1) * h];
            for (w, a) in row.iter().zip(&hidden) {
                logits[o] += w * a;
            }
        }
        (logits, hidden)
    }

    pub fn logits(&self, features: &StateFeatures) -> Result<[f64; 2]> {
        if features.dim() != self.input_dim {
            return Err(Error::usage(format!(
                "feature dim {} does not match policy input dim {}",
                features.dim(),
                self.input_dim
            )));
        }
        Ok(self.forward(&features.0).0)
    }

    /// Softmax action distribution (Keep, Inline).
    pub fn action_dist(&self, features: &StateFeatures) -> Result<(f64, f64)> {
        let [l0, l1] = self.logits(features)?;
        Ok(softmax2(l0, l1))
    }

    /// Argmax action; exact probability ties resolve to Keep.
    pub fn greedy_action(&self, features: &StateFeatures) -> Result<Action> {
        let [l0, l1] = self.logits(features)?;
        Ok(if l1 > l0 { Action::Inline } else { Action::Keep })
    }

    /// |p(Keep) - p(Inline)|: the policy's confidence gap at a state.
    pub fn gap(&self, features: &StateFeatures) -> Result<f64> {
        let (p0, p1) = self.action_dist(features)?;
        Ok((p0 - p1).abs())
    }

    /// Weighted cross-entropy loss and its gradient over a batch.
    ///
    /// Returns the loss sum and a gradient vector in parameter layout. The
    /// batch is processed in order, so results are bitwise deterministic.
    pub fn loss_and_grad(&self, batch: &[WeightedExample]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad_iter(batch.iter())
    }

    /// Same as `loss_and_grad`, over a shuffled index gather.
    pub fn loss_and_grad_iter<'a>(
        &self,
        batch: impl Iterator<Item = &'a WeightedExample>,
    ) -> Result<(f64, Vec<f64>)> {
        let (d, h) = (self.input_dim, self.hidden_width);
        let (b1_at, w2_at, b2_at) = self.slices();
        let v = &self.values;
        let mut loss = 0.0;
        let mut grad = vec![0.0; v.len()];
        for ex in batch {
            if ex.features.dim() != d {
                return Err(Error::usage(format!(
                    "feature dim {} does not match policy input dim {d}",
                    ex.features.dim()
                )));
            }
            let x = &ex.features.0;
            let (logits, hidden) = self.forward(x);
            let m = logits[0].max(logits[1]);
            let e0 = (logits[0] - m).exp();
            let e1 = (logits[1] - m).exp();
            let log_norm = m + (e0 + e1).ln();
            loss += ex.weight * (log_norm - logits[ex.action.index()]);

            let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
            let mut dlogits = [p[0] * ex.weight, p[1] * ex.weight];
            dlogits[ex.action.index()] -= ex.weight;

            for o in 0..2 {
                grad[b2_at + o] += dlogits[o];
                for i in 0..h {
                    grad[w2_at + o * h + i] += dlogits[o] * hidden[i];
                }
            }
            for i in 0..h {
                if hidden[i] > 0.0 {
                    let dz = dlogits[0] * v[w2_at + i] + dlogits[1] * v[w2_at + h + i];
                    grad[b1_at + i] += dz;
                    for (g, xv) in grad[i * d..(i + 1) * d].iter_mut().zip(x) {
                        *g += dz * xv;
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::numeric("loss is not finite"));
        }
        Ok((loss, grad))
    }

    /// Serialize to a JSON checkpoint; floats round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::config(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: PolicyParams = serde_json::from_str(&text)
            .map_err(|e| Error::parse(1, format!("bad checkpoint: {e}")))?;
        params.validate()?;
        Ok(params)
    }
}

fn softmax2(l0: f64, l1: f64) -> (f64, f64) {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    let norm = e0 + e1;
    (e0 / norm, e1 / norm)
}

impl Policy for PolicyParams {
    fn act(&self, features: &StateFeatures) -> Action {
        self.greedy_action(features)
            .expect("feature dim matches policy input dim")
    }
}

impl StochasticPolicy for PolicyParams {
    fn action_dist(&self, features: &StateFeatures) -> (f64, f64) {
        PolicyParams::action_dist(self, features).expect("feature dim matches policy input dim")
    }
}
