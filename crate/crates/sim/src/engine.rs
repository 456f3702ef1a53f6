//! The event loop: one global queue, strict `(time, seq)` order, faults
//! applied per envelope, convergence checked at every tick boundary once
//! the trace has drained.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use thiserror::Error;

use lattice_core::crdt::{encoding, select_implementation, CapabilitySet, CrdtTypeTag, CrdtValue};
use lattice_core::hash::fnv1a64;
use lattice_core::replication::{
    Envelope, NodeId, ReplicaNode, ReplicationError, StaticMembership, TopologyKind,
};
use lattice_core::rng::SplitMix64;
use lattice_core::storage::{MemoryBackend, StoreKey};

use crate::metrics::{Metrics, NodeDigests};
use crate::scenario::{Diagnostic, FaultModel, Scenario, TraceOp};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario ({} violations)", .0.len())]
    InvalidScenario(Vec<Diagnostic>),
    #[error("event log: {0}")]
    EventLog(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(#[from] ReplicationError),
}

#[derive(Debug, Clone)]
enum EventKind {
    Tick(NodeId),
    LocalOp(TraceOp),
    Deliver(Envelope),
    TopologySwap(TopologyKind),
}

#[derive(Debug, Clone)]
struct SimEvent {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { time, seq, kind }));
    }

    fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    fn pending_deliveries(&self) -> u64 {
        self.heap
            .iter()
            .filter(|Reverse(e)| matches!(e.kind, EventKind::Deliver(_)))
            .count() as u64
    }
}

/// Options for a run beyond the scenario itself.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Tab-separated event log: tick, seq, kind, from, to, key.
    pub event_log: Option<&'a mut dyn Write>,
}

/// Everything a finished run yields: the serializable metrics plus the
/// final canonical state bytes per node and key (absent keys materialized
/// as bottoms), for harnesses that inspect more than digests.
pub struct RunOutput {
    pub metrics: Metrics,
    pub states: BTreeMap<NodeId, BTreeMap<StoreKey, Vec<u8>>>,
}

/// Apply the fault model to one outbound envelope. Fixed draw order —
/// drop, delay, duplicate, duplicate-delay — with later draws consumed
/// only when reached: a dropped envelope costs exactly one draw.
pub fn inject(
    env: &Envelope,
    faults: &FaultModel,
    rng: &mut SplitMix64,
    now: u64,
) -> Vec<(u64, Envelope)> {
    if rng.chance(faults.drop_prob) {
        return Vec::new();
    }
    let delay = rng.range_inclusive(faults.delay_min, faults.delay_max);
    let mut out = vec![(now + delay, env.clone())];
    if rng.chance(faults.dup_prob) {
        let dup_delay = rng.range_inclusive(faults.delay_min, faults.delay_max);
        out.push((now + dup_delay, env.clone()));
    }
    out
}

/// True iff every node holds byte-identical canonical state for every key
/// in `registry`; a key a node never wrote reads as the bottom state of
/// its declared tag.
pub fn check_convergence(
    nodes: &BTreeMap<NodeId, ReplicaNode<MemoryBackend>>,
    registry: &BTreeMap<StoreKey, CrdtTypeTag>,
) -> bool {
    for (key, &tag) in registry {
        let bottom = encoding::encode(&CrdtValue::bottom(tag));
        let mut reference: Option<Vec<u8>> = None;
        for node in nodes.values() {
            let bytes = node
                .store()
                .get_bytes(key)
                .map_or_else(|| bottom.clone(), <[u8]>::to_vec);
            match &reference {
                None => reference = Some(bytes),
                Some(r) => {
                    if *r != bytes {
                        return false;
                    }
                }
            }
        }
    }
    true
}

pub fn run(scenario: &Scenario) -> Result<Metrics, SimError> {
    Ok(run_with_options(scenario, RunOptions::default())?.metrics)
}

pub fn run_with_options(
    scenario: &Scenario,
    mut options: RunOptions<'_>,
) -> Result<RunOutput, SimError> {
    let diagnostics = scenario.validate();
    if !diagnostics.is_empty() {
        return Err(SimError::InvalidScenario(diagnostics));
    }

    let node_ids = scenario.node_ids();
    let mut membership = StaticMembership::build(scenario.topology, &node_ids)
        .map_err(SimError::Internal)?;

    // Build nodes: every declared variable is registered (and its bottom
    // state materialized) on every node; dataflow specs are owned by the
    // lowest node id.
    let mut nodes: BTreeMap<NodeId, ReplicaNode<MemoryBackend>> = BTreeMap::new();
    for &id in &node_ids {
        let mut node = ReplicaNode::new(
            id,
            scenario.sync_policy,
            scenario.anti_entropy_period,
            MemoryBackend::new(),
            scenario.seed,
        );
        for var in &scenario.variables {
            let caps = CapabilitySet::new(var.capabilities.iter().copied())
                .expect("validated capabilities");
            let tag = select_implementation(&caps, var.kind).expect("validated selection");
            node.register_variable(var.key.clone(), tag, Some(caps))?;
        }
        if id == node_ids[0] {
            for spec in &scenario.dataflow {
                node.register_dataflow(spec.clone())?;
            }
        }
        nodes.insert(id, node);
    }

    // Key registry for digests and convergence: declared variables plus
    // dataflow sinks, tags as materialized on the owner.
    let registry: BTreeMap<StoreKey, CrdtTypeTag> = nodes[&node_ids[0]]
        .variables()
        .map(|(key, decl)| (key.clone(), decl.tag))
        .collect();

    let trace = scenario.resolve_trace();
    let last_op_tick = trace.iter().map(|op| op.tick).max().unwrap_or(0);

    let mut queue = EventQueue::default();
    for &id in &node_ids {
        queue.push(1, EventKind::Tick(id));
    }
    for op in trace {
        queue.push(op.tick, EventKind::LocalOp(op));
    }
    for swap in &scenario.topology_swaps {
        queue.push(swap.tick, EventKind::TopologySwap(swap.topology));
    }

    let mut rng = SplitMix64::new(scenario.seed);
    let mut counters = Counters::default();
    let mut current_tick = 0u64;
    let mut converged_at: Option<u64> = None;

    while let Some(next_time) = queue.peek_time() {
        if next_time > current_tick {
            // End of `current_tick`: quiescence check once the trace is
            // done. Breaking here leaves unprocessed deliveries in the
            // queue, where the in-flight count picks them up.
            if current_tick >= last_op_tick && check_convergence(&nodes, &registry) {
                converged_at = Some(current_tick);
                break;
            }
            // Duration exhausted: deliveries delayed past the end stay in
            // flight rather than extending the run.
            if next_time > scenario.duration {
                break;
            }
            current_tick = next_time;
        }
        let event = queue.pop().expect("peeked");
        if let Some(log) = options.event_log.as_deref_mut() {
            log_event(log, &event)?;
        }
        match event.kind {
            EventKind::Tick(id) => {
                let node = nodes.get_mut(&id).expect("node exists");
                let outbound = node.on_tick(&membership)?;
                send_all(
                    outbound,
                    current_tick,
                    &scenario.faults,
                    &mut rng,
                    &mut queue,
                    &mut counters,
                );
                if event.time < scenario.duration {
                    queue.push(event.time + 1, EventKind::Tick(id));
                }
            }
            EventKind::LocalOp(op) => {
                let node = nodes.get_mut(&NodeId(op.node)).expect("node exists");
                let (_, outbound) = node.on_local_update(&membership, &op.key, &op.mutation)?;
                send_all(
                    outbound,
                    current_tick,
                    &scenario.faults,
                    &mut rng,
                    &mut queue,
                    &mut counters,
                );
            }
            EventKind::Deliver(env) => {
                // No envelope crosses an active partition, even one that
                // was in flight when the partition started.
                if scenario
                    .faults
                    .crosses_partition(current_tick, env.from, env.to)
                {
                    counters.dropped += 1;
                    continue;
                }
                let node = nodes.get_mut(&env.to).expect("node exists");
                match node.on_receive(&membership, &env) {
                    Ok(replies) => {
                        counters.delivered += 1;
                        send_all(
                            replies,
                            current_tick,
                            &scenario.faults,
                            &mut rng,
                            &mut queue,
                            &mut counters,
                        );
                    }
                    Err(ReplicationError::CorruptEnvelope(_)) => {
                        counters.corrupt += 1;
                        counters.dropped += 1;
                    }
                    Err(e) => return Err(SimError::Internal(e)),
                }
            }
            EventKind::TopologySwap(kind) => {
                membership.swap(kind, &node_ids)?;
            }
        }
    }

    // Queue drained (or convergence broke the loop): check the final state
    // if quiescence never caught it mid-run.
    if converged_at.is_none()
        && current_tick >= last_op_tick
        && check_convergence(&nodes, &registry)
    {
        converged_at = Some(current_tick);
    }

    let metrics = Metrics {
        converged: converged_at.is_some(),
        convergence_tick: converged_at,
        envelopes_sent: counters.sent,
        envelopes_delivered: counters.delivered,
        envelopes_dropped: counters.dropped,
        envelopes_duplicated: counters.duplicated,
        envelopes_corrupt: counters.corrupt,
        envelopes_in_flight: queue.pending_deliveries(),
        bytes_sent: counters.bytes,
        node_digests: digest_nodes(&nodes, &registry),
    };
    let states = nodes
        .iter()
        .map(|(&id, node)| {
            let keyed = registry
                .iter()
                .map(|(key, &tag)| {
                    let bytes = node
                        .store()
                        .get_bytes(key)
                        .map_or_else(|| encoding::encode(&CrdtValue::bottom(tag)), <[u8]>::to_vec);
                    (key.clone(), bytes)
                })
                .collect();
            (id, keyed)
        })
        .collect();
    Ok(RunOutput { metrics, states })
}

#[derive(Default)]
struct Counters {
    sent: u64,
    delivered: u64,
    dropped: u64,
    duplicated: u64,
    corrupt: u64,
    bytes: u64,
}

fn send_all(
    envelopes: Vec<Envelope>,
    now: u64,
    faults: &FaultModel,
    rng: &mut SplitMix64,
    queue: &mut EventQueue,
    counters: &mut Counters,
) {
    for env in envelopes {
        counters.sent += 1;
        counters.bytes += env.wire_len() as u64;
        // A partition blocks at the source without consuming fault draws.
        if faults.crosses_partition(now, env.from, env.to) {
            counters.dropped += 1;
            continue;
        }
        let deliveries = inject(&env, faults, rng, now);
        match deliveries.len() {
            0 => counters.dropped += 1,
            2 => counters.duplicated += 1,
            _ => {}
        }
        for (tick, env) in deliveries {
            queue.push(tick, EventKind::Deliver(env));
        }
    }
}

fn digest_nodes(
    nodes: &BTreeMap<NodeId, ReplicaNode<MemoryBackend>>,
    registry: &BTreeMap<StoreKey, CrdtTypeTag>,
) -> Vec<NodeDigests> {
    nodes
        .iter()
        .map(|(&id, node)| {
            let keys = registry
                .iter()
                .map(|(key, &tag)| {
                    let digest = match node.store().get_bytes(key) {
                        Some(bytes) => fnv1a64(bytes),
                        None => fnv1a64(&encoding::encode(&CrdtValue::bottom(tag))),
                    };
                    (key.as_str().to_string(), format!("{digest:016x}"))
                })
                .collect();
            NodeDigests { node: id.0, keys }
        })
        .collect()
}

fn log_event(log: &mut dyn Write, event: &SimEvent) -> std::io::Result<()> {
    let (kind, from, to, key) = match &event.kind {
        EventKind::Tick(id) => ("tick", id.0.to_string(), "-".into(), "-".into()),
        EventKind::LocalOp(op) => (
            "local_op",
            op.node.to_string(),
            "-".into(),
            op.key.as_str().to_string(),
        ),
        EventKind::Deliver(env) => (
            env.kind.name(),
            env.from.0.to_string(),
            env.to.0.to_string(),
            env.key
                .as_ref()
                .map_or_else(|| "-".to_string(), |k| k.as_str().to_string()),
        ),
        EventKind::TopologySwap(_) => ("topology_swap", "-".into(), "-".into(), "-".into()),
    };
    writeln!(
        log,
        "{}\t{}\t{}\t{}\t{}\t{}",
        event.time, event.seq, kind, from, to, key
    )
}
