//! Per-node replication engine.
//!
//! One logical event loop per node: `on_local_update`, `on_receive`, and
//! `on_tick` for a given node are never concurrent with each other. The
//! engine looks membership up fresh on every emission, applies every
//! remote state through merge-on-write, and never assumes causal delivery
//! or dedup from the transport.

use std::collections::{BTreeMap, BTreeSet};

use crate::crdt::{
    self, encoding, CapabilitySet, CrdtTypeTag, CrdtValue, Mutation,
};
use crate::dataflow::{DataflowEngine, DataflowSpec};
use crate::hash::fnv1a64;
use crate::replication::envelope::{
    decode_key_list, encode_key_list, DigestEntry, DigestSummary, Envelope, EnvelopeKind,
};
use crate::replication::{Membership, NodeId, ReplicationError, SyncPolicy};
use crate::rng::SplitMix64;
use crate::storage::{Backend, StoreKey, VariableStore};

/// A variable known to this node: its representation and, when declared
/// locally, its capabilities. Variables learned from remote state syncs
/// carry no capabilities — they are never mutated locally.
#[derive(Debug, Clone)]
pub struct VariableDecl {
    pub tag: CrdtTypeTag,
    pub capabilities: Option<CapabilitySet>,
}

pub struct ReplicaNode<B: Backend> {
    id: NodeId,
    policy: SyncPolicy,
    anti_entropy_period: u64,
    store: VariableStore<B>,
    variables: BTreeMap<StoreKey, VariableDecl>,
    pending: BTreeMap<StoreKey, u32>,
    dirty: BTreeSet<StoreKey>,
    ticks: u64,
    anti_entropy_round: u64,
    rotation_offset: u64,
    dataflow: DataflowEngine,
}

impl<B: Backend> ReplicaNode<B> {
    /// `rotation_seed` feeds the anti-entropy neighbor rotation so that
    /// runs are reproducible from the scenario seed.
    pub fn new(
        id: NodeId,
        policy: SyncPolicy,
        anti_entropy_period: u64,
        backend: B,
        rotation_seed: u64,
    ) -> Self {
        ReplicaNode {
            id,
            policy,
            anti_entropy_period,
            store: VariableStore::new(backend),
            variables: BTreeMap::new(),
            pending: BTreeMap::new(),
            dirty: BTreeSet::new(),
            ticks: 0,
            anti_entropy_round: 0,
            rotation_offset: SplitMix64::new(rotation_seed ^ id.0).next_u64(),
            dataflow: DataflowEngine::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn policy(&self) -> SyncPolicy {
        self.policy
    }

    pub fn store(&self) -> &VariableStore<B> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut VariableStore<B> {
        &mut self.store
    }

    pub fn variables(&self) -> impl Iterator<Item = (&StoreKey, &VariableDecl)> {
        self.variables.iter()
    }

    pub fn pending_count(&self, key: &StoreKey) -> u32 {
        self.pending.get(key).copied().unwrap_or(0)
    }

    /// Declare a variable and materialize its bottom state, so digests and
    /// convergence checks see a uniform key set from tick zero.
    pub fn register_variable(
        &mut self,
        key: StoreKey,
        tag: CrdtTypeTag,
        capabilities: Option<CapabilitySet>,
    ) -> Result<(), ReplicationError> {
        self.store.put_merge(&key, &CrdtValue::bottom(tag))?;
        self.variables.insert(key, VariableDecl { tag, capabilities });
        Ok(())
    }

    /// Register a dataflow spec on this node; this node becomes the
    /// spec's maintainer. Creates the sink variable with capabilities
    /// derived from the sources.
    pub fn register_dataflow(&mut self, spec: DataflowSpec) -> Result<(), ReplicationError> {
        let variables = &self.variables;
        let sink = spec.sink.clone();
        let sink_tag = self
            .dataflow
            .register(spec, |key| variables.get(key).map(|d| d.tag))?;
        let caps = match sink_tag {
            CrdtTypeTag::GSet => CapabilitySet::new([
                crate::crdt::Capability::Add,
                crate::crdt::Capability::Read,
            ]),
            _ => CapabilitySet::new([
                crate::crdt::Capability::Add,
                crate::crdt::Capability::Remove,
                crate::crdt::Capability::Read,
            ]),
        }
        .expect("static capability sets are valid");
        self.register_variable(sink, sink_tag, Some(caps))
    }

    pub fn dataflow_specs(&self) -> &[DataflowSpec] {
        self.dataflow.specs()
    }

    /// Apply a locally originated mutation, persist it, and emit whatever
    /// the synchronization policy calls for.
    pub fn on_local_update(
        &mut self,
        membership: &dyn Membership,
        key: &StoreKey,
        mutation: &Mutation,
    ) -> Result<(CrdtValue, Vec<Envelope>), ReplicationError> {
        let decl = self
            .variables
            .get(key)
            .ok_or_else(|| ReplicationError::UnknownVariable(key.clone()))?;
        let required = mutation.required_capability();
        let allowed = decl
            .capabilities
            .as_ref()
            .is_some_and(|caps| caps.contains(required));
        if !allowed {
            return Err(ReplicationError::CapabilityViolation {
                key: key.clone(),
                capability: required.to_string(),
            });
        }

        let current = match self.store.get(key)? {
            Some(v) => v,
            None => CrdtValue::bottom(decl.tag),
        };
        let updated = crdt::update(&current, mutation, self.id.actor())?;
        let changed = updated != current;
        let stored = self.store.put_merge(key, &updated)?;

        let mut out = self.policy_emit(membership, key)?;
        if changed {
            out.extend(self.run_dataflow(membership, key)?);
        }
        Ok((stored, out))
    }

    /// Advance this node's clock one tick. Interval policies flush dirty
    /// keys on their schedule; every policy runs digest anti-entropy every
    /// `anti_entropy_period` ticks toward one neighbor chosen by seeded
    /// rotation.
    pub fn on_tick(
        &mut self,
        membership: &dyn Membership,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        self.ticks += 1;
        let mut out = Vec::new();

        if let SyncPolicy::Interval { ticks } = self.policy {
            if self.ticks.is_multiple_of(ticks) && !self.dirty.is_empty() {
                let keys: Vec<StoreKey> = std::mem::take(&mut self.dirty).into_iter().collect();
                for key in keys {
                    out.extend(self.state_sync_all(membership, &key)?);
                }
            }
        }

        if self.anti_entropy_period > 0 && self.ticks.is_multiple_of(self.anti_entropy_period) {
            self.anti_entropy_round += 1;
            let neighbors: Vec<NodeId> = membership
                .view(self.id)?
                .neighbors
                .into_iter()
                .collect();
            if !neighbors.is_empty() {
                let pick = (self.rotation_offset.wrapping_add(self.anti_entropy_round)
                    % neighbors.len() as u64) as usize;
                let target = neighbors[pick];
                out.push(Envelope {
                    from: self.id,
                    to: target,
                    kind: EnvelopeKind::Digest,
                    key: None,
                    payload: self.digest_summary().encode(),
                });
            }
        }
        Ok(out)
    }

    /// Handle one inbound envelope. State syncs merge and reply nothing;
    /// digests answer with a reply plus this node's states for every key
    /// that differs; digest replies push the states the peer flagged.
    pub fn on_receive(
        &mut self,
        membership: &dyn Membership,
        env: &Envelope,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        debug_assert_eq!(env.to, self.id, "envelope routed to the wrong node");
        match env.kind {
            EnvelopeKind::StateSync => {
                let key = env.key.clone().ok_or_else(|| {
                    ReplicationError::CorruptEnvelope("state sync without key".into())
                })?;
                let incoming = encoding::decode(&env.payload)
                    .map_err(|e| ReplicationError::CorruptEnvelope(e.to_string()))?;
                if !self.variables.contains_key(&key) {
                    self.variables.insert(
                        key.clone(),
                        VariableDecl {
                            tag: incoming.tag(),
                            capabilities: None,
                        },
                    );
                }
                let before = self.store.get_bytes(&key).map(<[u8]>::to_vec);
                self.store.put_merge(&key, &incoming)?;
                let changed = self.store.get_bytes(&key).map(<[u8]>::to_vec) != before;
                if changed {
                    return self.run_dataflow(membership, &key);
                }
                Ok(Vec::new())
            }
            EnvelopeKind::Digest => {
                let summary = DigestSummary::decode(&env.payload)?;
                let flagged = self.differing_keys(&summary);
                if flagged.is_empty() {
                    return Ok(Vec::new());
                }
                let mut out = vec![Envelope {
                    from: self.id,
                    to: env.from,
                    kind: EnvelopeKind::DigestReply,
                    key: None,
                    payload: encode_key_list(&flagged),
                }];
                for key in &flagged {
                    out.extend(self.state_sync_if_present(env.from, key));
                }
                Ok(out)
            }
            EnvelopeKind::DigestReply => {
                let keys = decode_key_list(&env.payload)?;
                let mut out = Vec::new();
                for key in &keys {
                    out.extend(self.state_sync_if_present(env.from, key));
                }
                Ok(out)
            }
        }
    }

    /// The membership contract: pure lookup, no caching.
    pub fn membership_lookup(
        &self,
        membership: &dyn Membership,
    ) -> Result<crate::replication::MembershipView, ReplicationError> {
        membership.view(self.id)
    }

    fn policy_emit(
        &mut self,
        membership: &dyn Membership,
        key: &StoreKey,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        match self.policy {
            SyncPolicy::Immediate => self.state_sync_all(membership, key),
            SyncPolicy::EveryN { n } => {
                let counter = self.pending.entry(key.clone()).or_insert(0);
                *counter += 1;
                if *counter >= n {
                    *counter = 0;
                    self.state_sync_all(membership, key)
                } else {
                    Ok(Vec::new())
                }
            }
            SyncPolicy::Interval { .. } => {
                self.dirty.insert(key.clone());
                Ok(Vec::new())
            }
        }
    }

    fn state_sync_all(
        &mut self,
        membership: &dyn Membership,
        key: &StoreKey,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        let Some(state) = self.store.get_bytes(key).map(<[u8]>::to_vec) else {
            return Ok(Vec::new());
        };
        let view = membership.view(self.id)?;
        Ok(view
            .neighbors
            .into_iter()
            .map(|to| Envelope::state_sync(self.id, to, key.clone(), state.clone()))
            .collect())
    }

    fn state_sync_if_present(&self, to: NodeId, key: &StoreKey) -> Option<Envelope> {
        self.store
            .get_bytes(key)
            .map(|state| Envelope::state_sync(self.id, to, key.clone(), state.to_vec()))
    }

    fn digest_summary(&self) -> DigestSummary {
        let entries = self
            .store
            .records()
            .map(|record| {
                let context = match encoding::decode(&record.state) {
                    Ok(CrdtValue::OrSet(s)) => Some(s.context().clone()),
                    _ => None,
                };
                DigestEntry {
                    key: record.key.clone(),
                    tag: record.type_tag,
                    state_hash: fnv1a64(&record.state),
                    context,
                }
            })
            .collect();
        DigestSummary { entries }
    }

    /// Keys whose local state is not known to equal the sender's: differing
    /// hashes over the union of both key sets, with absent keys reading as
    /// the bottom state of the advertised tag.
    fn differing_keys(&self, summary: &DigestSummary) -> Vec<StoreKey> {
        let mut flagged = BTreeSet::new();
        let mut summarized: BTreeMap<&StoreKey, &DigestEntry> = BTreeMap::new();
        for entry in &summary.entries {
            summarized.insert(&entry.key, entry);
            let local_hash = match self.store.get_bytes(&entry.key) {
                Some(bytes) => fnv1a64(bytes),
                None => fnv1a64(&encoding::encode(&CrdtValue::bottom(entry.tag))),
            };
            if local_hash != entry.state_hash {
                flagged.insert(entry.key.clone());
            }
        }
        for record in self.store.records() {
            if summarized.contains_key(&record.key) {
                continue;
            }
            let bottom = encoding::encode(&CrdtValue::bottom(record.type_tag));
            if record.state != bottom {
                flagged.insert(record.key.clone());
            }
        }
        flagged.into_iter().collect()
    }

    /// Recompute every spec transitively downstream of `changed` and
    /// reconcile its sink by local add/remove mutations, each emitted under
    /// the node's own policy.
    fn run_dataflow(
        &mut self,
        membership: &dyn Membership,
        changed: &StoreKey,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        if self.dataflow.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for idx in self.dataflow.affected(changed) {
            let spec = self.dataflow.specs()[idx].clone();
            let mut source_elements = Vec::with_capacity(spec.sources.len());
            for source in &spec.sources {
                source_elements.push(self.elements_of(source)?);
            }
            let target = self.dataflow.combined(&spec, &source_elements);
            let current = self.elements_of(&spec.sink)?;
            for element in target.difference(&current) {
                let m = Mutation::Add {
                    element: element.clone(),
                };
                out.extend(self.apply_sink_mutation(membership, &spec.sink, &m)?);
            }
            let sink_tag = self.variables[&spec.sink].tag;
            for element in current.difference(&target) {
                debug_assert_eq!(
                    sink_tag,
                    CrdtTypeTag::OrSet,
                    "grow-only sinks cannot shrink"
                );
                let m = Mutation::Remove {
                    element: element.clone(),
                };
                out.extend(self.apply_sink_mutation(membership, &spec.sink, &m)?);
            }
        }
        Ok(out)
    }

    fn apply_sink_mutation(
        &mut self,
        membership: &dyn Membership,
        sink: &StoreKey,
        mutation: &Mutation,
    ) -> Result<Vec<Envelope>, ReplicationError> {
        let tag = self.variables[sink].tag;
        let current = match self.store.get(sink)? {
            Some(v) => v,
            None => CrdtValue::bottom(tag),
        };
        let updated = crdt::update(&current, mutation, self.id.actor())?;
        self.store.put_merge(sink, &updated)?;
        self.policy_emit(membership, sink)
    }

    fn elements_of(&mut self, key: &StoreKey) -> Result<BTreeSet<Vec<u8>>, ReplicationError> {
        match self.store.get(key)? {
            Some(v) => match crdt::query(&v) {
                crdt::QueryResult::Elements(e) => Ok(e),
                _ => Ok(BTreeSet::new()),
            },
            None => Ok(BTreeSet::new()),
        }
    }
}
