//! Deterministic discrete-event simulator for multi-node replication
//! scenarios.
//!
//! Time is integer ticks, the event queue is processed in strict
//! `(time, seq)` order, and every random draw comes from one seeded
//! SplitMix64 stream — so a `(scenario, seed)` pair fully determines the
//! run, byte for byte, including the metrics file. Faults (drop, delay,
//! duplication, partitions) apply per envelope in a fixed draw order.
//!
//! The simulator is strictly single-threaded by design: determinism is the
//! contract, parallelism is a non-goal.

mod engine;
mod metrics;
mod scenario;

/// The pinned deterministic generator (SplitMix64).
pub use lattice_core::rng::SplitMix64 as DeterministicRng;

pub use engine::{check_convergence, inject, run, run_with_options, RunOptions, RunOutput, SimError};
pub use metrics::{Metrics, NodeDigests};
pub use scenario::{
    Diagnostic, FaultModel, Partition, Scenario, TopologySwap, TraceGenerator, TraceOp, TraceSpec,
    VariableSpec,
};
