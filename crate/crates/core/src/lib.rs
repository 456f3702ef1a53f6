//! Convergent replicated state with pluggable storage and anti-entropy
//! replication.
//!
//! The crate is organized in four layers:
//!
//! - [`crdt`]: join-semilattice value types (counters, sets, a register),
//!   their mutators, the merge function, and capability-driven selection of
//!   the cheapest representation.
//! - [`storage`]: a per-node variable store that stays correct over weakly
//!   consistent backends by merging on every write, plus an atomic snapshot
//!   file format.
//! - [`replication`]: runtime-chosen overlay topologies, synchronization
//!   policies (immediate / every-N / interval), and the digest-repair
//!   anti-entropy engine.
//! - [`dataflow`]: derived variables maintained as deterministic functions
//!   of source variables.
//!
//! All state is exchanged as full canonical byte encodings; convergence
//! relies on merge alone, never on delivery order, causality, or dedup.

pub mod crdt;
pub mod dataflow;
pub mod hash;
pub mod replication;
pub mod rng;
pub mod storage;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use crdt::{
    ActorId, Capability, CapabilitySet, CrdtError, CrdtTypeTag, CrdtValue, Dot, LatticeOrdering,
    Mutation, QueryResult, VariableKind, VersionVector,
};
pub use replication::{
    Envelope, EnvelopeKind, Membership, MembershipView, NodeId, ReplicaNode, ReplicationError,
    SyncPolicy, TopologyKind,
};
pub use storage::{Backend, MemoryBackend, StorageError, StoreKey, VariableStore};
