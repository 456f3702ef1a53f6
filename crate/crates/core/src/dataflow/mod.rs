//! Derived variables: sinks maintained as deterministic functions of
//! source variables.
//!
//! A spec names a combinator (map, filter, union, intersection), one or two
//! set-typed sources, and a sink. The node owning the spec recomputes the
//! target membership whenever a source changes and reconciles the sink by
//! adding missing elements and removing observed extras; sink replicas on
//! other nodes converge through ordinary replication. Capabilities
//! propagate: add-only sources produce an add-only sink, which specializes
//! to a grow-only set.
//!
//! Functions are named registry ids, never serialized code, so specs stay
//! language-neutral on the wire and in scenario files.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crdt::CrdtTypeTag;
use crate::storage::StoreKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Combinator {
    Map { function: String },
    Filter { predicate: String },
    Union,
    Intersection,
}

impl Combinator {
    pub fn arity(&self) -> usize {
        match self {
            Combinator::Map { .. } | Combinator::Filter { .. } => 1,
            Combinator::Union | Combinator::Intersection => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Combinator::Map { .. } => "map",
            Combinator::Filter { .. } => "filter",
            Combinator::Union => "union",
            Combinator::Intersection => "intersection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowSpec {
    pub id: String,
    pub combinator: Combinator,
    pub sources: Vec<StoreKey>,
    pub sink: StoreKey,
}

#[derive(Debug, Error)]
pub enum DataflowError {
    #[error("spec {spec}: dataflow graph would contain a cycle")]
    CycleDetected { spec: String },
    #[error("spec {spec}: source {key} is {tag}, only set-typed sources are supported")]
    TypeUnsupported {
        spec: String,
        key: StoreKey,
        tag: CrdtTypeTag,
    },
    #[error("spec {spec}: unknown function {function}")]
    UnknownFunction { spec: String, function: String },
    #[error("spec {spec}: {combinator} takes {expected} sources, got {got}")]
    ArityMismatch {
        spec: String,
        combinator: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("spec {spec}: unknown source {key}")]
    UnknownSource { spec: String, key: StoreKey },
    #[error("spec {spec}: sink {key} is already maintained by spec {other}")]
    DuplicateSink {
        spec: String,
        key: StoreKey,
        other: String,
    },
}

type MapFn = fn(&[u8]) -> Vec<u8>;
type PredFn = fn(&[u8]) -> bool;

/// Whitelist of pure, total transformations on element byte strings.
/// Identical across all nodes of a scenario by construction: the registry
/// is code, only ids travel.
pub struct FunctionRegistry {
    maps: BTreeMap<&'static str, MapFn>,
    predicates: BTreeMap<&'static str, PredFn>,
}

fn as_decimal(element: &[u8]) -> Option<u64> {
    std::str::from_utf8(element).ok()?.parse().ok()
}

fn map_identity(element: &[u8]) -> Vec<u8> {
    element.to_vec()
}

/// Numeric elements double arithmetically; anything else doubles
/// byte-wise, keeping the function total.
fn map_double(element: &[u8]) -> Vec<u8> {
    match as_decimal(element) {
        Some(n) => (u128::from(n) * 2).to_string().into_bytes(),
        None => {
            let mut out = element.to_vec();
            out.extend_from_slice(element);
            out
        }
    }
}

fn map_upper(element: &[u8]) -> Vec<u8> {
    element.to_ascii_uppercase()
}

fn pred_even(element: &[u8]) -> bool {
    as_decimal(element).is_some_and(|n| n % 2 == 0)
}

fn pred_odd(element: &[u8]) -> bool {
    as_decimal(element).is_some_and(|n| n % 2 == 1)
}

fn pred_nonempty(element: &[u8]) -> bool {
    !element.is_empty()
}

impl FunctionRegistry {
    pub fn builtin() -> Self {
        FunctionRegistry {
            maps: BTreeMap::from([
                ("identity", map_identity as MapFn),
                ("double", map_double as MapFn),
                ("upper", map_upper as MapFn),
            ]),
            predicates: BTreeMap::from([
                ("even", pred_even as PredFn),
                ("odd", pred_odd as PredFn),
                ("nonempty", pred_nonempty as PredFn),
            ]),
        }
    }

    pub fn map(&self, id: &str) -> Option<MapFn> {
        self.maps.get(id).copied()
    }

    pub fn predicate(&self, id: &str) -> Option<PredFn> {
        self.predicates.get(id).copied()
    }
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        FunctionRegistry::builtin()
    }
}

/// Sink representation derived from the sources: removable input anywhere
/// forces an observed-remove sink; all-grow-only input keeps the sink
/// grow-only.
pub fn derived_sink_tag(source_tags: &[CrdtTypeTag]) -> CrdtTypeTag {
    if source_tags.iter().all(|&t| t == CrdtTypeTag::GSet) {
        CrdtTypeTag::GSet
    } else {
        CrdtTypeTag::OrSet
    }
}

/// Validate a spec against the registry and source types; returns the sink
/// tag on success. Shared by the engine and scenario validation.
pub fn validate_spec(
    spec: &DataflowSpec,
    source_tag: impl Fn(&StoreKey) -> Option<CrdtTypeTag>,
    registry: &FunctionRegistry,
) -> Result<CrdtTypeTag, DataflowError> {
    let expected = spec.combinator.arity();
    if spec.sources.len() != expected {
        return Err(DataflowError::ArityMismatch {
            spec: spec.id.clone(),
            combinator: spec.combinator.name(),
            expected,
            got: spec.sources.len(),
        });
    }
    match &spec.combinator {
        Combinator::Map { function } => {
            if registry.map(function).is_none() {
                return Err(DataflowError::UnknownFunction {
                    spec: spec.id.clone(),
                    function: function.clone(),
                });
            }
        }
        Combinator::Filter { predicate } => {
            if registry.predicate(predicate).is_none() {
                return Err(DataflowError::UnknownFunction {
                    spec: spec.id.clone(),
                    function: predicate.clone(),
                });
            }
        }
        Combinator::Union | Combinator::Intersection => {}
    }
    let mut tags = Vec::new();
    for key in &spec.sources {
        let tag = source_tag(key).ok_or_else(|| DataflowError::UnknownSource {
            spec: spec.id.clone(),
            key: key.clone(),
        })?;
        if !tag.is_set() {
            return Err(DataflowError::TypeUnsupported {
                spec: spec.id.clone(),
                key: key.clone(),
                tag,
            });
        }
        tags.push(tag);
    }
    if spec.sources.contains(&spec.sink) {
        return Err(DataflowError::CycleDetected {
            spec: spec.id.clone(),
        });
    }
    Ok(derived_sink_tag(&tags))
}

/// The registered specs of one owning node, kept in topological order.
pub struct DataflowEngine {
    registry: FunctionRegistry,
    specs: Vec<DataflowSpec>,
    topo: Vec<usize>,
}

impl DataflowEngine {
    pub fn new() -> Self {
        DataflowEngine {
            registry: FunctionRegistry::builtin(),
            specs: Vec::new(),
            topo: Vec::new(),
        }
    }

    pub fn registry(&self) -> &FunctionRegistry {
        &self.registry
    }

    pub fn specs(&self) -> &[DataflowSpec] {
        &self.specs
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Register a spec. `source_tag` resolves existing variables (sinks of
    /// earlier specs included). Returns the derived sink tag; the caller
    /// creates the sink variable.
    pub fn register(
        &mut self,
        spec: DataflowSpec,
        source_tag: impl Fn(&StoreKey) -> Option<CrdtTypeTag>,
    ) -> Result<CrdtTypeTag, DataflowError> {
        let sink_tag = validate_spec(&spec, source_tag, &self.registry)?;
        if let Some(other) = self.specs.iter().find(|s| s.sink == spec.sink) {
            return Err(DataflowError::DuplicateSink {
                spec: spec.id.clone(),
                key: spec.sink.clone(),
                other: other.id.clone(),
            });
        }
        self.specs.push(spec);
        match self.toposort() {
            Some(order) => {
                self.topo = order;
                Ok(sink_tag)
            }
            None => {
                let spec = self.specs.pop().unwrap();
                Err(DataflowError::CycleDetected { spec: spec.id })
            }
        }
    }

    /// Spec indices transitively downstream of `changed`, in topological
    /// order (upstream first).
    pub fn affected(&self, changed: &StoreKey) -> Vec<usize> {
        let mut dirty_keys: BTreeSet<&StoreKey> = BTreeSet::from([changed]);
        let mut affected = Vec::new();
        for &idx in &self.topo {
            let spec = &self.specs[idx];
            if spec.sources.iter().any(|s| dirty_keys.contains(s)) {
                affected.push(idx);
                dirty_keys.insert(&spec.sink);
            }
        }
        affected
    }

    /// Apply a spec's combinator to the current source element sets.
    pub fn combined(
        &self,
        spec: &DataflowSpec,
        source_elements: &[BTreeSet<Vec<u8>>],
    ) -> BTreeSet<Vec<u8>> {
        match &spec.combinator {
            Combinator::Map { function } => {
                let f = self.registry.map(function).expect("validated on register");
                source_elements[0].iter().map(|e| f(e)).collect()
            }
            Combinator::Filter { predicate } => {
                let p = self
                    .registry
                    .predicate(predicate)
                    .expect("validated on register");
                source_elements[0]
                    .iter()
                    .filter(|e| p(e))
                    .cloned()
                    .collect()
            }
            Combinator::Union => source_elements[0]
                .union(&source_elements[1])
                .cloned()
                .collect(),
            Combinator::Intersection => source_elements[0]
                .intersection(&source_elements[1])
                .cloned()
                .collect(),
        }
    }

    /// Kahn's algorithm over key-level edges source -> sink; `None` on a
    /// cycle.
    fn toposort(&self) -> Option<Vec<usize>> {
        let n = self.specs.len();
        let mut indegree = vec![0usize; n];
        let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, a) in self.specs.iter().enumerate() {
            for (j, b) in self.specs.iter().enumerate() {
                if i != j && b.sources.contains(&a.sink) {
                    downstream[i].push(j);
                    indegree[j] += 1;
                }
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &j in &downstream[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

impl Default for DataflowEngine {
    fn default() -> Self {
        DataflowEngine::new()
    }
}

#[cfg(test)]
mod tests;
