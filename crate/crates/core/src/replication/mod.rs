//! Topology construction, the membership contract, synchronization
//! policies, and the anti-entropy node engine.
//!
//! Which nodes talk to which is a runtime parameter: the engine asks an
//! external membership service on every emission and never caches beyond a
//! tick, so topologies can be swapped live. When changes become visible is
//! equally a runtime parameter — immediately, every N changes, or on a
//! timer — and none of those choices affect what the program converges to,
//! only when.

mod envelope;
mod node;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crdt::CrdtError;
use crate::dataflow::DataflowError;
use crate::rng::SplitMix64;
use crate::storage::{StorageError, StoreKey};

pub use envelope::{
    decode_frame, encode_frame, DigestEntry, DigestSummary, Envelope, EnvelopeKind,
};
pub use node::{ReplicaNode, VariableDecl};

/// Identity of a node; doubles as the actor id for mutations it originates.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub fn actor(self) -> crate::crdt::ActorId {
        crate::crdt::ActorId(self.0)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Overlay shape, chosen per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    /// Star: every client peers only with the hub, the hub with everyone.
    ClientServer { server: NodeId },
    /// Everyone peers with everyone.
    FullMesh,
    /// Fanout-sized partial views sampled deterministically from the seed;
    /// resampled with an incremented sub-seed until the union graph is
    /// connected.
    PeerToPeer { fanout: u32, seed: u64 },
}

/// One node's neighbor set as reported by the membership service.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MembershipView {
    pub neighbors: BTreeSet<NodeId>,
}

impl MembershipView {
    pub fn of<I: IntoIterator<Item = NodeId>>(neighbors: I) -> Self {
        MembershipView {
            neighbors: neighbors.into_iter().collect(),
        }
    }
}

/// When local changes are pushed to neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SyncPolicy {
    /// Push on every change.
    Immediate,
    /// Push after every `n` changes to a variable.
    EveryN { n: u32 },
    /// Batch dirty variables and push every `ticks` ticks.
    Interval { ticks: u64 },
}

#[derive(Debug, Error)]
pub enum ReplicationError {
    #[error("need at least 2 nodes to build a topology, got {0}")]
    TooFewNodes(usize),
    #[error("fanout {fanout} out of range for {nodes} nodes (must be 1..{nodes})")]
    FanoutTooLarge { fanout: u32, nodes: usize },
    #[error("client/server hub {server} is not a member node")]
    ServerNotMember { server: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("corrupt envelope: {0}")]
    CorruptEnvelope(String),
    #[error("unknown variable {0}")]
    UnknownVariable(StoreKey),
    #[error("variable {key} does not declare the {capability} capability")]
    CapabilityViolation { key: StoreKey, capability: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Crdt(#[from] CrdtError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

/// The external membership service contract: a pure lookup the engine
/// calls on every emission.
pub trait Membership {
    fn view(&self, node: NodeId) -> Result<MembershipView, ReplicationError>;
}

/// Directory backed by a topology built up front; swapping topologies at
/// runtime is a rebuild, visible to every lookup from the next call on.
#[derive(Debug, Clone, Default)]
pub struct StaticMembership {
    views: BTreeMap<NodeId, MembershipView>,
}

impl StaticMembership {
    pub fn new(views: BTreeMap<NodeId, MembershipView>) -> Self {
        StaticMembership { views }
    }

    /// Build for `kind` over `nodes`. A single-node system has an empty
    /// view regardless of kind.
    pub fn build(kind: TopologyKind, nodes: &[NodeId]) -> Result<Self, ReplicationError> {
        if nodes.len() == 1 {
            let mut views = BTreeMap::new();
            views.insert(nodes[0], MembershipView::default());
            return Ok(StaticMembership { views });
        }
        Ok(StaticMembership {
            views: build_topology(kind, nodes)?,
        })
    }

    pub fn swap(&mut self, kind: TopologyKind, nodes: &[NodeId]) -> Result<(), ReplicationError> {
        *self = StaticMembership::build(kind, nodes)?;
        Ok(())
    }

    pub fn views(&self) -> &BTreeMap<NodeId, MembershipView> {
        &self.views
    }
}

impl Membership for StaticMembership {
    fn view(&self, node: NodeId) -> Result<MembershipView, ReplicationError> {
        self.views
            .get(&node)
            .cloned()
            .ok_or(ReplicationError::UnknownNode(node))
    }
}

/// Construct per-node neighbor views for a topology.
pub fn build_topology(
    kind: TopologyKind,
    nodes: &[NodeId],
) -> Result<BTreeMap<NodeId, MembershipView>, ReplicationError> {
    if nodes.len() < 2 {
        return Err(ReplicationError::TooFewNodes(nodes.len()));
    }
    let mut sorted: Vec<NodeId> = nodes.to_vec();
    sorted.sort();
    sorted.dedup();

    match kind {
        TopologyKind::ClientServer { server } => {
            if !sorted.contains(&server) {
                return Err(ReplicationError::ServerNotMember { server });
            }
            let mut views = BTreeMap::new();
            for &n in &sorted {
                let view = if n == server {
                    MembershipView::of(sorted.iter().copied().filter(|&m| m != server))
                } else {
                    MembershipView::of([server])
                };
                views.insert(n, view);
            }
            Ok(views)
        }
        TopologyKind::FullMesh => {
            let mut views = BTreeMap::new();
            for &n in &sorted {
                views.insert(
                    n,
                    MembershipView::of(sorted.iter().copied().filter(|&m| m != n)),
                );
            }
            Ok(views)
        }
        TopologyKind::PeerToPeer { fanout, seed } => {
            if fanout == 0 || fanout as usize >= sorted.len() {
                return Err(ReplicationError::FanoutTooLarge {
                    fanout,
                    nodes: sorted.len(),
                });
            }
            // Pure function of (seed, nodes, fanout): resample with an
            // incremented sub-seed until the union graph is connected.
            for attempt in 0u64.. {
                let mut rng = SplitMix64::new(seed.wrapping_add(attempt));
                let views = sample_partial_views(&sorted, fanout as usize, &mut rng);
                if undirected_connected(&views) {
                    return Ok(views);
                }
            }
            unreachable!("sampling retries until connected");
        }
    }
}

fn sample_partial_views(
    nodes: &[NodeId],
    fanout: usize,
    rng: &mut SplitMix64,
) -> BTreeMap<NodeId, MembershipView> {
    let mut views = BTreeMap::new();
    for &n in nodes {
        let mut candidates: Vec<NodeId> = nodes.iter().copied().filter(|&m| m != n).collect();
        // Partial Fisher-Yates: the first `fanout` slots become the view.
        for slot in 0..fanout {
            let pick = slot + rng.below((candidates.len() - slot) as u64) as usize;
            candidates.swap(slot, pick);
        }
        views.insert(n, MembershipView::of(candidates[..fanout].iter().copied()));
    }
    views
}

fn undirected_connected(views: &BTreeMap<NodeId, MembershipView>) -> bool {
    let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&n, view) in views {
        for &m in &view.neighbors {
            adjacency.entry(n).or_default().insert(m);
            adjacency.entry(m).or_default().insert(n);
        }
    }
    let Some(&start) = views.keys().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        if let Some(neighbors) = adjacency.get(&n) {
            for &m in neighbors {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
    }
    seen.len() == views.len()
}
