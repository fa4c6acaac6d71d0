//! Shared oracles for the integration suites.
//!
//! Everything here is written independently of the library's own episode
//! bookkeeping so that agreement is evidence: the replay oracle keeps a flat
//! pending list walked by a cursor and decides terminal liveness by
//! reachability from the roots, where the library keeps a FIFO queue and
//! eliminates zero-incoming functions iteratively. On acyclic call graphs the
//! two liveness rules provably coincide.

#![allow(dead_code)]

use bcmax::mdp::Action;
use bcmax::policy::{PolicyParams, WeightedExample};
use bcmax::sim::{EnvParams, ModuleGraph};

/// Independent episode state used to cross-check the simulator.
#[derive(Clone)]
pub struct OracleState<'a> {
    graph: &'a ModuleGraph,
    params: &'a EnvParams,
    sizes: Vec<f64>,
    /// Live call multiset, unordered.
    calls: Vec<(usize, usize)>,
    /// (caller, callee, depth); decided entries stay in place.
    pending: Vec<(usize, usize, usize)>,
    cursor: usize,
    decided: usize,
}

impl<'a> OracleState<'a> {
    pub fn start(graph: &'a ModuleGraph, params: &'a EnvParams) -> Self {
        let sizes = graph.functions.iter().map(|f| f.base_size).collect();
        let calls = graph
            .callsites
            .iter()
            .map(|c| (c.caller, c.callee))
            .collect();
        // Decisions go caller by caller with declaration order preserved
        // inside each caller; a stable sort on the caller id gives exactly
        // that.
        let mut pending: Vec<(usize, usize, usize)> = graph
            .callsites
            .iter()
            .map(|c| (c.caller, c.callee, 0))
            .collect();
        pending.sort_by_key(|&(caller, _, _)| caller);
        OracleState {
            graph,
            params,
            sizes,
            calls,
            pending,
            cursor: 0,
            decided: 0,
        }
    }

    pub fn done(&self) -> bool {
        self.cursor == self.pending.len() || self.decided == self.params.horizon_cap
    }

    /// Feature vector for the next pending call, recomputed from scratch.
    pub fn features(&self) -> Vec<f64> {
        let (caller, callee, depth) = self.pending[self.cursor];
        let incoming = self.calls.iter().filter(|&&(_, to)| to == callee).count();
        vec![
            self.sizes[callee],
            self.sizes[caller],
            incoming as f64,
            depth as f64,
            (self.pending.len() - self.cursor) as f64,
            (1.0 + self.sizes[caller]).ln(),
        ]
    }

    pub fn decide(&mut self, action: Action) {
        assert!(!self.done(), "decide on a finished episode");
        let (caller, callee, depth) = self.pending[self.cursor];
        self.cursor += 1;
        self.decided += 1;
        if action == Action::Inline {
            self.sizes[caller] += self.sizes[callee] - self.params.call_overhead;
            let at = self
                .calls
                .iter()
                .position(|&c| c == (caller, callee))
                .expect("pending call is live");
            self.calls.swap_remove(at);
            for c in self.graph.callsites.iter().filter(|c| c.caller == callee) {
                self.calls.push((caller, c.callee));
                if depth < self.params.max_inline_depth {
                    self.pending.push((caller, c.callee, depth + 1));
                }
            }
        }
    }

    /// Sum of sizes over functions reachable from a root via live calls.
    pub fn final_size(&self) -> f64 {
        let n = self.graph.functions.len();
        let mut reach = vec![false; n];
        let mut stack: Vec<usize> = (0..n)
            .filter(|&f| self.graph.functions[f].is_root)
            .collect();
        for &f in &stack {
            reach[f] = true;
        }
        while let Some(f) = stack.pop() {
            for &(from, to) in &self.calls {
                if from == f && !reach[to] {
                    reach[to] = true;
                    stack.push(to);
                }
            }
        }
        (0..n)
            .filter(|&f| reach[f])
            .map(|f| self.sizes[f])
            .sum()
    }
}

/// Replay a fixed action sequence on the oracle; decisions past the end of
/// the sequence fall back to Keep. Returns per-step features and the final
/// size.
pub fn oracle_replay(
    graph: &ModuleGraph,
    params: &EnvParams,
    actions: &[Action],
) -> (Vec<Vec<f64>>, f64) {
    let mut state = OracleState::start(graph, params);
    let mut features = Vec::new();
    while !state.done() {
        features.push(state.features());
        let action = actions
            .get(features.len() - 1)
            .copied()
            .unwrap_or(Action::Keep);
        state.decide(action);
    }
    (features, state.final_size())
}

/// Number of decisions in the episode that inlines everything. Switching any
/// Inline to Keep only removes pending entries, so this bounds every episode
/// on the module.
pub fn max_episode_len(graph: &ModuleGraph, params: &EnvParams) -> usize {
    let mut state = OracleState::start(graph, params);
    let mut len = 0;
    while !state.done() {
        state.decide(Action::Inline);
        len += 1;
    }
    len
}

/// Exhaustive minimum over every action sequence, by depth-first search of
/// the full decision tree. Only call on modules whose all-inline episode is
/// short; the tree has up to 2^len leaves.
pub fn exhaustive_min_size(graph: &ModuleGraph, params: &EnvParams) -> f64 {
    fn dfs(state: &OracleState) -> f64 {
        if state.done() {
            return state.final_size();
        }
        let mut keep = state.clone();
        keep.decide(Action::Keep);
        let mut inline = state.clone();
        inline.decide(Action::Inline);
        dfs(&keep).min(dfs(&inline))
    }
    let state = OracleState::start(graph, params);
    dfs(&state)
}

/// Central-difference gradient of the batch loss, one coordinate at a time.
pub fn central_diff_grad(params: &PolicyParams, batch: &[WeightedExample]) -> Vec<f64> {
    let mut grad = vec![0.0; params.values.len()];
    for i in 0..params.values.len() {
        let eps = 1e-6 * (1.0 + params.values[i].abs());
        let mut plus = params.clone();
        plus.values[i] += eps;
        let mut minus = params.clone();
        minus.values[i] -= eps;
        let (lp, _) = plus.loss_and_grad(batch).expect("finite loss");
        let (lm, _) = minus.loss_and_grad(batch).expect("finite loss");
        grad[i] = (lp - lm) / (2.0 * eps);
    }
    grad
}

/// True if any hidden pre-activation sits close enough to the ReLU kink that
/// a finite-difference probe would straddle it. Gradient checks skip such
/// instances; the loss is not differentiable there.
pub fn near_relu_kink(params: &PolicyParams, batch: &[WeightedExample], margin: f64) -> bool {
    let (d, h) = (params.input_dim, params.hidden_width);
    let b1_at = d * h;
    batch.iter().any(|ex| {
        (0..h).any(|i| {
            let mut z = params.values[b1_at + i];
            for (w, x) in params.values[i * d..(i + 1) * d].iter().zip(&ex.features.0) {
                z += w * x;
            }
            z.abs() < margin
        })
    })
}
