//! Run output: convergence result, traffic counters, and per-node state
//! digests.

use serde::{Deserialize, Serialize};

/// Digests of one node's final states: key -> FNV-1a 64 of the canonical
/// state bytes, as a fixed-width hex string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDigests {
    pub node: u64,
    pub keys: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub converged: bool,
    pub convergence_tick: Option<u64>,
    pub envelopes_sent: u64,
    pub envelopes_delivered: u64,
    pub envelopes_dropped: u64,
    pub envelopes_duplicated: u64,
    pub envelopes_corrupt: u64,
    /// Deliveries still queued when the run stopped. Conservation:
    /// `sent + duplicated = delivered + dropped + in_flight`.
    pub envelopes_in_flight: u64,
    pub bytes_sent: u64,
    pub node_digests: Vec<NodeDigests>,
}

impl Metrics {
    /// Per-key digests must agree across nodes for a converged run; this
    /// collapses them to the first node's set for comparisons.
    pub fn digest_fingerprint(&self) -> Option<&std::collections::BTreeMap<String, String>> {
        self.node_digests.first().map(|d| &d.keys)
    }
}
