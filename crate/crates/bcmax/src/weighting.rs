//! Per-module training weights.
//!
//! Small modules dominate a corpus by count while large modules dominate by
//! size, so uniform per-module weighting underserves exactly the modules
//! where absolute savings live. Modules are grouped into geometric size
//! buckets: bucket 0 covers [0, 1), bucket m >= 1 covers [2^(m-1), 2^m).
//! `bucket_weights` equalizes bucket mass in one shot; the hedge variant
//! maintains a distribution over buckets across iterations, multiplicatively
//! boosting buckets that still carry a large share of the total size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ETA: f64 = 0.5;
pub const DEFAULT_WEIGHT_CAP: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    Uniform,
    Bucket,
    Hedge,
}

/// Geometric size bucket: 0 for sizes below 1, otherwise floor(log2) + 1.
pub fn bucket_index(size: f64) -> Result<usize> {
    if !size.is_finite() || size < 0.0 {
        return Err(Error::usage(format!("bucket_index needs a finite nonnegative size, got {size}")));
    }
    if size < 1.0 {
        return Ok(0);
    }
    // Guard against log2 landing on the wrong side of a power of two.
    let mut m = size.log2().floor() as i64;
    while (m as f64).exp2() > size {
        m -= 1;
    }
    while ((m + 1) as f64).exp2() <= size {
        m += 1;
    }
    Ok(m as usize + 1)
}

/// Occupancy count per bucket, sized to the largest occupied bucket.
pub fn bucket_counts(sizes: &[f64]) -> Result<Vec<usize>> {
    let mut counts = Vec::new();
    for &s in sizes {
        let m = bucket_index(s)?;
        if m >= counts.len() {
            counts.resize(m + 1, 0);
        }
        counts[m] += 1;
    }
    Ok(counts)
}

/// One-shot bucket equalization: each module is weighted by the largest
/// bucket's occupancy over its own bucket's occupancy.
pub fn bucket_weights(best_sizes: &[f64]) -> Result<Vec<f64>> {
    if best_sizes.is_empty() {
        return Err(Error::usage("bucket_weights needs at least one size"));
    }
    let counts = bucket_counts(best_sizes)?;
    let max_count = *counts.iter().max().expect("nonempty counts") as f64;
    best_sizes
        .iter()
        .map(|&s| Ok(max_count / counts[bucket_index(s)?] as f64))
        .collect()
}

/// Multiplicative-weights state over size buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingState {
    pub mode: WeightingMode,
    pub eta: f64,
    /// Number of hedge updates applied so far.
    pub t: usize,
    /// Probability per bucket; empty buckets carry zero and stay zero.
    pub p: Vec<f64>,
}

/// Initial hedge state: bucket probabilities proportional to occupancy.
pub fn hedge_init(best_sizes: &[f64], eta: f64) -> Result<WeightingState> {
    if best_sizes.is_empty() {
        return Err(Error::usage("hedge_init needs at least one size"));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::config(format!("eta must be positive, got {eta}")));
    }
    let counts = bucket_counts(best_sizes)?;
    let total = best_sizes.len() as f64;
    Ok(WeightingState {
        mode: WeightingMode::Hedge,
        eta,
        t: 0,
        p: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// One hedge step from per-bucket total sizes under the latest policy.
///
/// Losses are normalized by their max, scaled by -eta, exponentiated and
/// folded into p, which is then renormalized. A longer loss vector grows the
/// state with zero-probability buckets; an all-zero loss vector is a usage
/// error rather than a silent no-op.
pub fn hedge_update(state: &WeightingState, bucket_losses: &[f64]) -> Result<WeightingState> {
    if bucket_losses.len() < state.p.len() {
        return Err(Error::usage(format!(
            "got {} bucket losses for {} buckets",
            bucket_losses.len(),
            state.p.len()
        )));
    }
    if bucket_losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::usage("bucket losses must be finite and nonnegative"));
    }
    let max_loss = bucket_losses.iter().cloned().fold(0.0f64, f64::max);
    if max_loss == 0.0 {
        return Err(Error::usage("all bucket losses are zero"));
    }
    let mut p = state.p.clone();
    p.resize(bucket_losses.len(), 0.0);
    let mut next: Vec<f64> = p
        .iter()
        .zip(bucket_losses)
        .map(|(&pi, &l)| pi * (-state.eta * l / max_loss).exp())
        .collect();
    let norm: f64 = next.iter().sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numeric("hedge normalization collapsed"));
    }
    for v in &mut next {
        *v /= norm;
    }
    Ok(WeightingState {
        mode: state.mode,
        eta: state.eta,
        t: state.t + 1,
        p: next,
    })
}

/// Per-module weights from the current bucket distribution.
///
/// Each module gets (max p over buckets occupied by `best_sizes`) over the p
/// of its own bucket, floored at 1 and capped at `weight_cap`; modules whose
/// bucket carries zero probability get the cap.
pub fn weights_from_state(
    state: &WeightingState,
    best_sizes: &[f64],
    weight_cap: f64,
) -> Result<Vec<f64>> {
    if best_sizes.is_empty() {
        return Err(Error::usage("weights_from_state needs at least one size"));
    }
    if !(weight_cap >= 1.0) {
        return Err(Error::config(format!(
            "weight cap must be at least 1, got {weight_cap}"
        )));
    }
    let buckets: Vec<usize> = best_sizes
        .iter()
        .map(|&s| bucket_index(s))
        .collect::<Result<_>>()?;
    let p_of = |m: usize| state.p.get(m).copied().unwrap_or(0.0);
    let p_max = buckets.iter().map(|&m| p_of(m)).fold(0.0f64, f64::max);
    if p_max == 0.0 {
        return Err(Error::usage(
            "no occupied bucket carries probability; hedge state does not match these sizes",
        ));
    }
    Ok(buckets
        .iter()
        .map(|&m| {
            let pm = p_of(m);
            if pm <= 0.0 {
                weight_cap
            } else {
                (p_max / pm).clamp(1.0, weight_cap)
            }
        })
        .collect())
}

/// Uniform weights.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0; n]
}
