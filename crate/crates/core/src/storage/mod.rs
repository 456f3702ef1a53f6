//! Pluggable persistence that stays correct over weakly consistent
//! backends.
//!
//! Every write goes through [`VariableStore::put_merge`], which joins the
//! incoming state with whatever exists — so replayed writes are no-ops,
//! interleaved writers commute, and a stale or reordered backend can delay
//! data but never regress it. The store keeps the running join per key as
//! its authoritative copy; the backend underneath is free to be as weakly
//! consistent as it likes.

mod backend;
mod snapshot;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crdt::{self, CrdtError, CrdtTypeTag, CrdtValue, DecodeError, LatticeOrdering};

pub use backend::{AdversarialBackend, Backend, BackendError, MemoryBackend};
pub use snapshot::SNAPSHOT_MAGIC;

/// Name of a replicated variable: non-empty UTF-8, at most 255 bytes, no
/// interior NUL (the wire and snapshot formats carry a 1-byte length).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StoreKey(String);

impl StoreKey {
    pub fn new(name: impl Into<String>) -> Result<Self, StorageError> {
        let name = name.into();
        if name.is_empty() {
            return Err(StorageError::InvalidKey("key must be non-empty".into()));
        }
        if name.len() > 255 {
            return Err(StorageError::InvalidKey(format!(
                "key is {} bytes, limit is 255",
                name.len()
            )));
        }
        if name.bytes().any(|b| b == 0) {
            return Err(StorageError::InvalidKey(
                "key must not contain NUL bytes".into(),
            ));
        }
        Ok(StoreKey(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl TryFrom<String> for StoreKey {
    type Error = StorageError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        StoreKey::new(s)
    }
}

impl From<StoreKey> for String {
    fn from(k: StoreKey) -> String {
        k.0
    }
}

impl std::fmt::Display for StoreKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One stored variable: canonical state bytes plus a node-local revision
/// that strictly increases per key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub key: StoreKey,
    pub type_tag: CrdtTypeTag,
    pub state: Vec<u8>,
    pub revision: u64,
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("type mismatch for {key}: stored {stored}, incoming {incoming}")]
    TypeMismatch {
        key: StoreKey,
        stored: CrdtTypeTag,
        incoming: CrdtTypeTag,
    },
    #[error("backend unavailable: {0} (retryable)")]
    BackendUnavailable(String),
    #[error("corrupt record for {key}: {source}")]
    CorruptRecord { key: StoreKey, source: DecodeError },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Crdt(#[from] CrdtError),
}

/// Per-node variable store. Confined to one node's event loop; presents a
/// blocking, linear interface regardless of what the backend does inside.
pub struct VariableStore<B: Backend> {
    backend: B,
    records: BTreeMap<StoreKey, StoredRecord>,
}

impl<B: Backend> VariableStore<B> {
    pub fn new(backend: B) -> Self {
        VariableStore {
            backend,
            records: BTreeMap::new(),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    /// Join `incoming` into the stored state (bottom if absent), persist,
    /// and return the new stored value.
    pub fn put_merge(
        &mut self,
        key: &StoreKey,
        incoming: &CrdtValue,
    ) -> Result<CrdtValue, StorageError> {
        let existing = self.get(key)?;
        let merged = match &existing {
            Some(v) => {
                if v.tag() != incoming.tag() {
                    return Err(StorageError::TypeMismatch {
                        key: key.clone(),
                        stored: v.tag(),
                        incoming: incoming.tag(),
                    });
                }
                crdt::merge(v, incoming)?
            }
            None => crdt::canonicalize(incoming.clone()),
        };
        if let Some(v) = &existing {
            debug_assert!(matches!(
                crdt::compare(v, &merged).unwrap(),
                LatticeOrdering::Less | LatticeOrdering::Equal
            ));
        }
        let state = crdt::encoding::encode(&merged);
        let revision = self
            .records
            .get(key)
            .map(|r| r.revision + 1)
            .unwrap_or(1);
        self.backend
            .write(key, &state)
            .map_err(|e| StorageError::BackendUnavailable(e.to_string()))?;
        self.records.insert(
            key.clone(),
            StoredRecord {
                key: key.clone(),
                type_tag: merged.tag(),
                state,
                revision,
            },
        );
        Ok(merged)
    }

    /// Decoded canonical state, or `None` if the key was never written.
    ///
    /// The in-memory record is authoritative; the backend is only consulted
    /// for keys this store instance has not touched, and anything found
    /// there is folded in through the same merge path so a stale backend
    /// can never regress the store.
    pub fn get(&mut self, key: &StoreKey) -> Result<Option<CrdtValue>, StorageError> {
        if let Some(record) = self.records.get(key) {
            let v = crdt::encoding::decode(&record.state)
                .map_err(|e| StorageError::CorruptRecord {
                    key: key.clone(),
                    source: e,
                })?;
            return Ok(Some(v));
        }
        match self.backend.read(key) {
            Ok(Some(bytes)) => {
                let v = crdt::encoding::decode(&bytes).map_err(|e| StorageError::CorruptRecord {
                    key: key.clone(),
                    source: e,
                })?;
                self.records.insert(
                    key.clone(),
                    StoredRecord {
                        key: key.clone(),
                        type_tag: v.tag(),
                        state: bytes,
                        revision: 1,
                    },
                );
                Ok(Some(v))
            }
            Ok(None) => Ok(None),
            Err(e) => Err(StorageError::BackendUnavailable(e.to_string())),
        }
    }

    /// Canonical bytes of the stored state, without decoding.
    pub fn get_bytes(&self, key: &StoreKey) -> Option<&[u8]> {
        self.records.get(key).map(|r| r.state.as_slice())
    }

    pub fn type_tag(&self, key: &StoreKey) -> Option<CrdtTypeTag> {
        self.records.get(key).map(|r| r.type_tag)
    }

    pub fn scan(&self) -> Vec<StoreKey> {
        self.records.keys().cloned().collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &StoredRecord> {
        self.records.values()
    }

    /// Write all records to `path` atomically: temp file, fsync, rename.
    pub fn snapshot(&self, path: &std::path::Path) -> Result<(), StorageError> {
        snapshot::write(path, self.records.values())
    }

    /// Merge a snapshot file into this store record by record. Loading
    /// over live state is safe: each record goes through `put_merge`.
    pub fn load(&mut self, path: &std::path::Path) -> Result<usize, StorageError> {
        let records = snapshot::read(path)?;
        let count = records.len();
        for (key, _tag, state) in records {
            let value = crdt::encoding::decode(&state).map_err(|e| StorageError::CorruptRecord {
                key: key.clone(),
                source: e,
            })?;
            self.put_merge(&key, &value)?;
        }
        Ok(count)
    }
}
