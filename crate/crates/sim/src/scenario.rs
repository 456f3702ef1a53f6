//! Scenario documents: what a run consists of, and its validation.
//!
//! Scenarios parse from JSON (see the repository README for the schema).
//! Parsing is structural; `Scenario::validate` then checks every
//! cross-reference and range and reports one diagnostic per violation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use lattice_core::crdt::{
    select_implementation, Capability, CapabilitySet, CrdtTypeTag, Mutation, VariableKind,
};
use lattice_core::dataflow::{validate_spec, DataflowSpec, FunctionRegistry};
use lattice_core::replication::{NodeId, SyncPolicy, TopologyKind};
use lattice_core::rng::SplitMix64;
use lattice_core::storage::StoreKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Node count; node ids are 0..nodes-1.
    pub nodes: u64,
    pub topology: TopologyKind,
    pub sync_policy: SyncPolicy,
    #[serde(default = "default_anti_entropy_period")]
    pub anti_entropy_period: u64,
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub dataflow: Vec<DataflowSpec>,
    #[serde(default)]
    pub faults: FaultModel,
    pub trace: TraceSpec,
    pub duration: u64,
    pub seed: u64,
    #[serde(default)]
    pub topology_swaps: Vec<TopologySwap>,
}

fn default_anti_entropy_period() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub key: StoreKey,
    pub kind: VariableKind,
    /// Raw capability flags; validated (non-empty, implications, fit for
    /// the kind) by `Scenario::validate`, not at parse time, so bad files
    /// get proper diagnostics.
    pub capabilities: BTreeSet<Capability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub dup_prob: f64,
    #[serde(default)]
    pub delay_min: u64,
    #[serde(default)]
    pub delay_max: u64,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

impl FaultModel {
    /// The partition separating `from` and `to` at `tick`, if any.
    /// Partitions are active in `[from_tick, to_tick)`.
    pub fn crosses_partition(&self, tick: u64, from: NodeId, to: NodeId) -> bool {
        self.partitions.iter().any(|p| {
            tick >= p.from_tick
                && tick < p.to_tick
                && ((p.side_a.contains(&from.0) && p.side_b.contains(&to.0))
                    || (p.side_b.contains(&from.0) && p.side_a.contains(&to.0)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub from_tick: u64,
    pub to_tick: u64,
    pub side_a: BTreeSet<u64>,
    pub side_b: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySwap {
    pub tick: u64,
    pub topology: TopologyKind,
}

/// Either an explicit operation list or a seeded generator; exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops: Option<Vec<TraceOp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<TraceGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOp {
    pub tick: u64,
    pub node: u64,
    pub key: StoreKey,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceGenerator {
    pub seed: u64,
    pub ops_count: u32,
    /// Keys to mutate; defaults to every declared variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<StoreKey>>,
    #[serde(default = "default_remove_ratio")]
    pub remove_ratio: f64,
    #[serde(default = "default_decrement_ratio")]
    pub decrement_ratio: f64,
    /// Elements and register values are drawn from a pool of this size,
    /// small enough that concurrent operations actually collide.
    #[serde(default = "default_element_pool")]
    pub element_pool: u32,
}

fn default_remove_ratio() -> f64 {
    0.25
}

fn default_decrement_ratio() -> f64 {
    0.25
}

fn default_element_pool() -> u32 {
    12
}

/// One validation violation: where and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub section: String,
    pub field: String,
    pub reason: String,
}

impl Diagnostic {
    fn new(section: impl Into<String>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Diagnostic {
            section: section.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}: {}", self.section, self.field, self.reason)
    }
}

impl Scenario {
    pub fn node_ids(&self) -> Vec<NodeId> {
        (0..self.nodes).map(NodeId).collect()
    }

    /// Declared variable tags (dataflow sinks not included).
    pub fn variable_tag(&self, key: &StoreKey) -> Option<CrdtTypeTag> {
        self.variables.iter().find(|v| &v.key == key).and_then(|v| {
            let caps = CapabilitySet::new(v.capabilities.iter().copied()).ok()?;
            select_implementation(&caps, v.kind).ok()
        })
    }

    /// All violations, empty when the scenario is runnable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let d = &mut out;

        if self.nodes == 0 {
            push(d, "nodes", "count", "must be at least 1");
        }
        if self.duration == 0 {
            push(d, "duration", "ticks", "must be at least 1");
        }
        if self.anti_entropy_period == 0 {
            push(d, "anti_entropy_period", "ticks", "must be at least 1");
        }
        self.validate_topology(d, "topology", self.topology);
        match self.sync_policy {
            SyncPolicy::EveryN { n: 0 } => {
                push(d, "sync_policy", "n", "must be at least 1");
            }
            SyncPolicy::Interval { ticks: 0 } => {
                push(d, "sync_policy", "ticks", "must be at least 1");
            }
            _ => {}
        }

        self.validate_variables(d);
        self.validate_dataflow(d);
        self.validate_faults(d);
        self.validate_trace(d);

        for (i, swap) in self.topology_swaps.iter().enumerate() {
            let section = format!("topology_swaps[{i}]");
            if swap.tick == 0 || swap.tick > self.duration {
                push(d, &section, "tick", "must be within 1..=duration");
            }
            self.validate_topology(d, &section, swap.topology);
        }
        out
    }

    fn validate_topology(&self, d: &mut Vec<Diagnostic>, section: &str, kind: TopologyKind) {
        if self.nodes <= 1 {
            return; // single-node runs exchange nothing; topology is moot
        }
        match kind {
            TopologyKind::ClientServer { server } => {
                if server.0 >= self.nodes {
                    push(
                        d,
                        section,
                        "server",
                        format!("node {} is not a member (nodes: 0..{})", server.0, self.nodes),
                    );
                }
            }
            TopologyKind::FullMesh => {}
            TopologyKind::PeerToPeer { fanout, .. } => {
                if fanout == 0 || u64::from(fanout) >= self.nodes {
                    push(
                        d,
                        section,
                        "fanout",
                        format!(
                            "fanout ({fanout}) must be between 1 and node count - 1 ({})",
                            self.nodes - 1
                        ),
                    );
                }
            }
        }
    }

    fn validate_variables(&self, d: &mut Vec<Diagnostic>) {
        let mut seen: BTreeSet<&StoreKey> = BTreeSet::new();
        for (i, var) in self.variables.iter().enumerate() {
            let section = format!("variables[{i}]");
            if !seen.insert(&var.key) {
                push(d, &section, "key", format!("duplicate key {}", var.key));
            }
            match CapabilitySet::new(var.capabilities.iter().copied()) {
                Ok(caps) => {
                    if let Err(e) = select_implementation(&caps, var.kind) {
                        push(d, &section, "capabilities", e.to_string());
                    }
                }
                Err(e) => push(d, &section, "capabilities", e.to_string()),
            }
        }
    }

    fn validate_dataflow(&self, d: &mut Vec<Diagnostic>) {
        let registry = FunctionRegistry::builtin();
        // Sinks of earlier specs are legal sources for later ones, so
        // resolve tags incrementally in declaration order.
        let mut known: Vec<(StoreKey, CrdtTypeTag)> = self
            .variables
            .iter()
            .filter_map(|v| Some((v.key.clone(), self.variable_tag(&v.key)?)))
            .collect();
        let mut sinks: BTreeSet<StoreKey> = BTreeSet::new();
        for (i, spec) in self.dataflow.iter().enumerate() {
            let section = format!("dataflow[{i}]");
            if self.variables.iter().any(|v| v.key == spec.sink) {
                push(
                    d,
                    &section,
                    "sink",
                    format!("sink {} collides with a declared variable", spec.sink),
                );
                continue;
            }
            if !sinks.insert(spec.sink.clone()) {
                push(
                    d,
                    &section,
                    "sink",
                    format!("sink {} is maintained by an earlier spec", spec.sink),
                );
                continue;
            }
            let lookup = |key: &StoreKey| {
                known
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|&(_, tag)| tag)
            };
            match validate_spec(spec, lookup, &registry) {
                Ok(sink_tag) => known.push((spec.sink.clone(), sink_tag)),
                Err(e) => {
                    use lattice_core::dataflow::DataflowError::*;
                    let field = match &e {
                        CycleDetected { .. } | DuplicateSink { .. } => "sink",
                        UnknownFunction { .. } => "combinator",
                        _ => "sources",
                    };
                    push(d, &section, field, e.to_string());
                }
            }
        }
    }

    fn validate_faults(&self, d: &mut Vec<Diagnostic>) {
        let f = &self.faults;
        if !(0.0..=1.0).contains(&f.drop_prob) {
            push(d, "faults", "drop_prob", "must be within [0, 1]");
        }
        if !(0.0..=1.0).contains(&f.dup_prob) {
            push(d, "faults", "dup_prob", "must be within [0, 1]");
        }
        if f.delay_min > f.delay_max {
            push(d, "faults", "delay_min", "must be <= delay_max");
        }
        for (i, p) in f.partitions.iter().enumerate() {
            let section = format!("faults.partitions[{i}]");
            if p.from_tick > p.to_tick {
                push(d, &section, "from_tick", "must be <= to_tick");
            }
            if !p.side_a.is_disjoint(&p.side_b) {
                push(d, &section, "side_a", "sides must be disjoint");
            }
            for side in [&p.side_a, &p.side_b] {
                for &node in side {
                    if node >= self.nodes {
                        push(d, &section, "side_a", format!("node {node} out of range"));
                        break;
                    }
                }
            }
        }
    }

    fn validate_trace(&self, d: &mut Vec<Diagnostic>) {
        match (&self.trace.ops, &self.trace.generator) {
            (Some(_), Some(_)) => {
                push(d, "trace", "ops", "declare either ops or generator, not both");
            }
            (None, None) => {
                push(d, "trace", "ops", "declare either ops or a generator");
            }
            (Some(ops), None) => {
                for (i, op) in ops.iter().enumerate() {
                    let section = format!("trace.ops[{i}]");
                    if op.tick == 0 || op.tick > self.duration {
                        push(d, &section, "tick", "must be within 1..=duration");
                    }
                    if op.node >= self.nodes {
                        push(d, &section, "node", format!("node {} out of range", op.node));
                    }
                    match self.declared_capabilities(&op.key) {
                        None => {
                            push(d, &section, "key", format!("unknown variable {}", op.key));
                        }
                        Some(caps) => {
                            let required = op.mutation.required_capability();
                            if !caps.contains(&required) {
                                push(
                                    d,
                                    &section,
                                    "mutation",
                                    format!(
                                        "variable {} does not declare the {required} capability",
                                        op.key
                                    ),
                                );
                            }
                        }
                    }
                }
            }
            (None, Some(generator)) => {
                if !(0.0..=1.0).contains(&generator.remove_ratio) {
                    push(d, "trace.generator", "remove_ratio", "must be within [0, 1]");
                }
                if !(0.0..=1.0).contains(&generator.decrement_ratio) {
                    push(d, "trace.generator", "decrement_ratio", "must be within [0, 1]");
                }
                if generator.element_pool == 0 {
                    push(d, "trace.generator", "element_pool", "must be at least 1");
                }
                if let Some(keys) = &generator.keys {
                    for key in keys {
                        if self.declared_capabilities(key).is_none() {
                            push(
                                d,
                                "trace.generator",
                                "keys",
                                format!("unknown variable {key}"),
                            );
                        }
                    }
                }
            }
        }
    }

    fn declared_capabilities(&self, key: &StoreKey) -> Option<&BTreeSet<Capability>> {
        self.variables
            .iter()
            .find(|v| &v.key == key)
            .map(|v| &v.capabilities)
    }

    /// Materialize the operation trace: explicit ops sorted stably by
    /// tick, or the generator expanded. Requires a valid scenario.
    ///
    /// Generator draw order per op, pinned for reproducibility: tick,
    /// node, key index, mutation-kind chance, element index — exactly five
    /// draws, consumed even where a variable shape ignores one.
    pub fn resolve_trace(&self) -> Vec<TraceOp> {
        if let Some(ops) = &self.trace.ops {
            let mut sorted = ops.clone();
            sorted.sort_by_key(|op| op.tick);
            return sorted;
        }
        let generator = self.trace.generator.as_ref().expect("validated");
        let keys: Vec<StoreKey> = match &generator.keys {
            Some(keys) => keys.clone(),
            None => self.variables.iter().map(|v| v.key.clone()).collect(),
        };
        if keys.is_empty() {
            return Vec::new();
        }
        let mut rng = SplitMix64::new(generator.seed);
        // Dense traces collide more; spread ops over roughly two per tick,
        // capped at half the duration so quiescence always has room.
        let trace_window = (u64::from(generator.ops_count) / 2)
            .clamp(1, (self.duration / 2).max(1));
        let mut ops = Vec::with_capacity(generator.ops_count as usize);
        for _ in 0..generator.ops_count {
            let tick = 1 + rng.below(trace_window);
            let node = rng.below(self.nodes);
            let key = keys[rng.below(keys.len() as u64) as usize].clone();
            let flip = rng.next_f64();
            let element_index = rng.below(u64::from(generator.element_pool));
            let caps = self.declared_capabilities(&key).expect("validated");
            let var = self.variables.iter().find(|v| v.key == key).expect("validated");
            let mutation = match var.kind {
                VariableKind::Counter => {
                    if caps.contains(&Capability::Decrement) && flip < generator.decrement_ratio {
                        Mutation::Decrement
                    } else {
                        Mutation::Increment
                    }
                }
                VariableKind::Collection => {
                    let element = format!("e{element_index}").into_bytes();
                    if caps.contains(&Capability::Remove) && flip < generator.remove_ratio {
                        Mutation::Remove { element }
                    } else {
                        Mutation::Add { element }
                    }
                }
                VariableKind::Register => Mutation::Assign {
                    value: format!("v{element_index}").into_bytes(),
                },
            };
            ops.push(TraceOp {
                tick,
                node,
                key,
                mutation,
            });
        }
        ops.sort_by_key(|op| op.tick);
        ops
    }
}

fn push(d: &mut Vec<Diagnostic>, section: &str, field: &str, reason: impl Into<String>) {
    d.push(Diagnostic::new(section, field, reason));
}
