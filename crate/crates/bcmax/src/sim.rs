//! Deterministic inlining-for-size simulator.
//!
//! A context is a module call graph. The episode walks a FIFO queue of
//! callsites; inlining a callsite grows the caller by the callee's *current*
//! size minus the per-call overhead, removes that call edge, and re-exposes
//! the callee's own callsites as copies inside the caller (bounded by an
//! inline-depth cap). The terminal cost is the summed size of functions still
//! reachable from a root after dead-function elimination; reward is its
//! negation. Everything is a pure function of (seed, parameters, actions).

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Context, Environment, StateFeatures, Trajectory, TrajectoryStep};

/// Number of per-decision features produced by the simulator.
pub const FEATURE_DIM: usize = 6;

/// Simulator and generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// Per-call overhead removed from the caller when a call is inlined.
    pub call_overhead: f64,
    /// Maximum depth at which inlined copies still enqueue new decisions.
    pub max_inline_depth: usize,
    /// Hard cap on decisions per episode; leftover callsites are kept as-is.
    pub horizon_cap: usize,
    /// Inclusive range of function counts per generated module.
    pub function_count: (usize, usize),
    /// Range of base sizes per generated function.
    pub size_range: (f64, f64),
    /// Probability of a call edge between an ordered pair of functions.
    pub edge_density: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            call_overhead: 1.0,
            max_inline_depth: 3,
            horizon_cap: 512,
            function_count: (3, 12),
            size_range: (1.0, 12.0),
            edge_density: 0.3,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.call_overhead > 0.0) {
            return Err(Error::config("call_overhead must be positive"));
        }
        if self.max_inline_depth < 1 {
            return Err(Error::config("max_inline_depth must be at least 1"));
        }
        if self.horizon_cap < 1 {
            return Err(Error::config("horizon_cap must be at least 1"));
        }
        if self.function_count.0 < 1 || self.function_count.0 > self.function_count.1 {
            return Err(Error::config(format!(
                "function_count range [{}, {}] is invalid",
                self.function_count.0, self.function_count.1
            )));
        }
        if !(self.size_range.0 >= 1.0) || self.size_range.0 > self.size_range.1 {
            return Err(Error::config(format!(
                "size_range [{}, {}] must satisfy 1 <= min <= max",
                self.size_range.0, self.size_range.1
            )));
        }
        if !self.size_range.1.is_finite() {
            return Err(Error::config("size_range must be finite"));
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return Err(Error::config("edge_density must lie in [0, 1]"));
        }
        if self.call_overhead > self.size_range.0 {
            // Keeps every inline delta nonnegative, so function sizes stay
            // nonnegative without clamping.
            return Err(Error::config(
                "call_overhead must not exceed the minimum base size",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionNode {
    pub id: usize,
    pub base_size: f64,
    pub is_root: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Callsite {
    pub caller: usize,
    pub callee: usize,
}

/// Static module call graph. Function ids are their indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleGraph {
    pub functions: Vec<FunctionNode>,
    pub callsites: Vec<Callsite>,
}

impl ModuleGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.functions.len();
        if n == 0 {
            return Err(Error::config("module has no functions"));
        }
        for (i, f) in self.functions.iter().enumerate() {
            if f.id != i {
                return Err(Error::config(format!(
                    "function id {} at position {i}: ids must equal their index",
                    f.id
                )));
            }
            if !(f.base_size >= 1.0) || !f.base_size.is_finite() {
                return Err(Error::config(format!(
                    "function {i} has base_size {}; must be finite and >= 1",
                    f.base_size
                )));
            }
        }
        if !self.functions.iter().any(|f| f.is_root) {
            return Err(Error::config("module has no root function"));
        }
        for (i, c) in self.callsites.iter().enumerate() {
            if c.caller >= n || c.callee >= n {
                return Err(Error::config(format!(
                    "callsite {i} references unknown function"
                )));
            }
            if c.caller == c.callee {
                return Err(Error::config(format!("callsite {i} is a self-call")));
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<()> {
        let n = self.functions.len();
        let mut indegree = vec![0usize; n];
        for c in &self.callsites {
            indegree[c.callee] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&f| indegree[f] == 0).collect();
        let mut seen = 0;
        while let Some(f) = ready.pop() {
            seen += 1;
            for c in &self.callsites {
                if c.caller == f {
                    indegree[c.callee] -= 1;
                    if indegree[c.callee] == 0 {
                        ready.push(c.callee);
                    }
                }
            }
        }
        if seen != n {
            return Err(Error::config("call graph contains a cycle"));
        }
        Ok(())
    }

    /// Static incoming-call count per function.
    pub fn incoming_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.functions.len()];
        for c in &self.callsites {
            counts[c.callee] += 1;
        }
        counts
    }

    /// Callsites declared by `caller`, in declaration order.
    pub fn callsites_of(&self, caller: usize) -> impl Iterator<Item = Callsite> + '_ {
        self.callsites
            .iter()
            .copied()
            .filter(move |c| c.caller == caller)
    }
}

/// Generate a module deterministically from (seed, params).
///
/// Functions are created along a shuffled topological order, so ids carry no
/// information about call direction; edges are sampled forward along that
/// order, which keeps the graph acyclic by construction. The first function
/// in the order is a root, as is anything nothing calls.
pub fn gen_module(seed: u64, params: &EnvParams) -> ModuleGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = params.function_count;
    let n = rng.gen_range(lo..=hi);
    let sizes: Vec<f64> = (0..n)
        .map(|_| {
            let (a, b) = params.size_range;
            if a == b {
                a
            } else {
                rng.gen_range(a..b)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut callsites = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < params.edge_density {
                callsites.push(Callsite {
                    caller: order[i],
                    callee: order[j],
                });
            }
        }
    }

    let mut incoming = vec![0usize; n];
    for c in &callsites {
        incoming[c.callee] += 1;
    }
    let functions = (0..n)
        .map(|id| FunctionNode {
            id,
            base_size: sizes[id],
            is_root: id == order[0] || incoming[id] == 0,
        })
        .collect();

    let graph = ModuleGraph {
        functions,
        callsites,
    };
    debug_assert!(graph.validate().is_ok());
    graph
}

/// A callsite awaiting a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingCall {
    pub caller: usize,
    pub callee: usize,
    pub depth: usize,
}

/// Mutable episode state over a module graph.
#[derive(Debug, Clone)]
pub struct SimState<'a> {
    graph: &'a ModuleGraph,
    params: &'a EnvParams,
    sizes: Vec<f64>,
    /// Multiset of live call edges (counts per (caller, callee)).
    live_edges: BTreeMap<(usize, usize), u32>,
    /// Live incoming-call count per function.
    incoming_live: Vec<u32>,
    queue: VecDeque<PendingCall>,
    steps_taken: usize,
}

impl<'a> SimState<'a> {
    pub fn new(graph: &'a ModuleGraph, params: &'a EnvParams) -> Self {
        let sizes = graph.functions.iter().map(|f| f.base_size).collect();
        let mut live_edges: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        let mut incoming_live = vec![0u32; graph.functions.len()];
        for c in &graph.callsites {
            *live_edges.entry((c.caller, c.callee)).or_insert(0) += 1;
            incoming_live[c.callee] += 1;
        }
        // Process callsites ordered by (caller id, declaration index).
        let mut indices: Vec<usize> = (0..graph.callsites.len()).collect();
        indices.sort_by_key(|&i| (graph.callsites[i].caller, i));
        let queue = indices
            .into_iter()
            .map(|i| PendingCall {
                caller: graph.callsites[i].caller,
                callee: graph.callsites[i].callee,
                depth: 0,
            })
            .collect();
        SimState {
            graph,
            params,
            sizes,
            live_edges,
            incoming_live,
            queue,
            steps_taken: 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.queue.is_empty() || self.steps_taken >= self.params.horizon_cap
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn pending_head(&self) -> Option<&PendingCall> {
        if self.is_terminal() {
            None
        } else {
            self.queue.front()
        }
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn live_edge_count(&self, caller: usize, callee: usize) -> u32 {
        self.live_edges.get(&(caller, callee)).copied().unwrap_or(0)
    }

    /// Features for the callsite at the head of the queue.
    ///
    /// Layout: callee current size, caller current size, callee live
    /// incoming-call count, inline depth, pending-queue length (including
    /// this entry), log(1 + caller current size).
    pub fn head_features(&self) -> Option<StateFeatures> {
        let head = self.pending_head()?;
        Some(StateFeatures(vec![
            self.sizes[head.callee],
            self.sizes[head.caller],
            self.incoming_live[head.callee] as f64,
            head.depth as f64,
            self.queue.len() as f64,
            (1.0 + self.sizes[head.caller]).ln(),
        ]))
    }

    /// Apply one decision to the head callsite.
    pub fn step(&mut self, action: Action) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::usage("step on terminal state"));
        }
        let head = self.queue.pop_front().expect("non-terminal state has head");
        if action == Action::Inline {
            let delta = self.sizes[head.callee] - self.params.call_overhead;
            self.sizes[head.caller] += delta;
            self.remove_live_edge(head.caller, head.callee);
            // The copied body re-exposes the callee's declared calls inside
            // the caller. They stay live either way; they only become new
            // decisions below the depth cap.
            for c in self.graph.callsites_of(head.callee) {
                debug_assert_ne!(c.callee, head.caller, "acyclic graph");
                *self.live_edges.entry((head.caller, c.callee)).or_insert(0) += 1;
                self.incoming_live[c.callee] += 1;
                if head.depth < self.params.max_inline_depth {
                    self.queue.push_back(PendingCall {
                        caller: head.caller,
                        callee: c.callee,
                        depth: head.depth + 1,
                    });
                }
            }
        }
        self.steps_taken += 1;
        Ok(())
    }

    fn remove_live_edge(&mut self, caller: usize, callee: usize) {
        let count = self
            .live_edges
            .get_mut(&(caller, callee))
            .expect("pending callsite has a live edge");
        *count -= 1;
        if *count == 0 {
            self.live_edges.remove(&(caller, callee));
        }
        self.incoming_live[callee] -= 1;
    }

    /// Terminal cost: iteratively eliminate non-root functions with no live
    /// incoming call (dropping their outgoing edges as they go), then sum the
    /// current sizes of the survivors.
    pub fn final_size(&self) -> f64 {
        let n = self.graph.functions.len();
        let mut counts = self.incoming_live.clone();
        let mut alive = vec![true; n];
        let mut dead: Vec<usize> = (0..n)
            .filter(|&f| counts[f] == 0 && !self.graph.functions[f].is_root)
            .collect();
        while let Some(f) = dead.pop() {
            if !alive[f] {
                continue;
            }
            alive[f] = false;
            for ((_, callee), mult) in self.live_edges.range((f, 0)..=(f, usize::MAX)) {
                counts[*callee] -= mult;
                if counts[*callee] == 0 && !self.graph.functions[*callee].is_root && alive[*callee]
                {
                    dead.push(*callee);
                }
            }
        }
        (0..n).filter(|&f| alive[f]).map(|f| self.sizes[f]).sum()
    }

    #[cfg(test)]
    fn pending_depths(&self) -> Vec<usize> {
        self.queue.iter().map(|p| p.depth).collect()
    }
}

/// The simulator as an episodic environment: each context's module graph is
/// regenerated from its seed, so rollouts are pure functions of their inputs.
#[derive(Debug, Clone)]
pub struct InlineSim {
    pub params: EnvParams,
}

impl InlineSim {
    pub fn new(params: EnvParams) -> Result<Self> {
        params.validate()?;
        Ok(InlineSim { params })
    }

    pub fn generate(&self, ctx: &Context) -> ModuleGraph {
        gen_module(ctx.seed, &self.params)
    }
}

impl Environment for InlineSim {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn run_with(
        &self,
        ctx: &Context,
        actor: &mut dyn FnMut(usize, &StateFeatures) -> Action,
    ) -> Trajectory {
        let graph = self.generate(ctx);
        let mut state = SimState::new(&graph, &self.params);
        let mut steps = Vec::new();
        while !state.is_terminal() {
            let features = state.head_features().expect("non-terminal state");
            let action = actor(steps.len(), &features);
            state.step(action).expect("non-terminal state");
            steps.push(TrajectoryStep { features, action });
        }
        Trajectory {
            context_id: ctx.id,
            policy_id: 0,
            steps,
            size: state.final_size(),
        }
    }
}

/// Write a corpus of module graphs as JSON lines.
pub fn save_corpus(path: &Path, graphs: &[ModuleGraph]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in graphs {
        serde_json::to_writer(&mut out, g)
            .map_err(|e| Error::config(format!("corpus serialization failed: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a corpus of module graphs from JSON lines, validating each.
pub fn load_corpus(path: &Path) -> Result<Vec<ModuleGraph>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let graph: ModuleGraph = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, format!("bad module graph: {e}")))?;
        graph
            .validate()
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        graphs.push(graph);
    }
    Ok(graphs)
}
