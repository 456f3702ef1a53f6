//! Backend contract and the shipped implementations.
//!
//! A backend owes nothing beyond "bytes in, bytes eventually out": no
//! read-your-own-writes, no ordering, no dedup. The store above it merges
//! on every write, which is what makes that weak contract survivable.

use std::collections::BTreeMap;

use thiserror::Error;

use super::StoreKey;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

pub trait Backend {
    fn read(&mut self, key: &StoreKey) -> Result<Option<Vec<u8>>, BackendError>;
    fn write(&mut self, key: &StoreKey, bytes: &[u8]) -> Result<(), BackendError>;
    fn scan(&mut self) -> Result<Vec<StoreKey>, BackendError>;
}

/// Plain in-memory map: the strongest backend we ship.
#[derive(Debug, Default)]
pub struct MemoryBackend {
    data: BTreeMap<StoreKey, Vec<u8>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        MemoryBackend::default()
    }
}

impl Backend for MemoryBackend {
    fn read(&mut self, key: &StoreKey) -> Result<Option<Vec<u8>>, BackendError> {
        Ok(self.data.get(key).cloned())
    }

    fn write(&mut self, key: &StoreKey, bytes: &[u8]) -> Result<(), BackendError> {
        self.data.insert(key.clone(), bytes.to_vec());
        Ok(())
    }

    fn scan(&mut self) -> Result<Vec<StoreKey>, BackendError> {
        Ok(self.data.keys().cloned().collect())
    }
}

/// Stand-in for an eventually consistent external store: buffers writes and
/// applies them late, out of order, sometimes twice; reads serve whatever
/// happens to have been applied. Used to check that merge-on-write keeps
/// the layer above correct no matter what the backend does.
#[derive(Debug)]
pub struct AdversarialBackend {
    applied: BTreeMap<StoreKey, Vec<u8>>,
    pending: Vec<(StoreKey, Vec<u8>)>,
    rng: SplitMix64,
}

impl AdversarialBackend {
    pub fn new(seed: u64) -> Self {
        AdversarialBackend {
            applied: BTreeMap::new(),
            pending: Vec::new(),
            rng: SplitMix64::new(seed),
        }
    }

    fn churn(&mut self) {
        // Apply a random subset of pending writes in a random order,
        // occasionally replaying one without removing it.
        let mut i = 0;
        while i < self.pending.len() {
            match self.rng.below(4) {
                0 => {
                    // apply and consume
                    let idx = self.rng.below(self.pending.len() as u64) as usize;
                    let (key, bytes) = self.pending.remove(idx);
                    self.applied.insert(key, bytes);
                }
                1 => {
                    // replay without consuming
                    let idx = self.rng.below(self.pending.len() as u64) as usize;
                    let (key, bytes) = self.pending[idx].clone();
                    self.applied.insert(key, bytes);
                    i += 1;
                }
                _ => i += 1,
            }
        }
    }

    /// Force every buffered write through, still in a shuffled order.
    pub fn settle(&mut self) {
        while !self.pending.is_empty() {
            let idx = self.rng.below(self.pending.len() as u64) as usize;
            let (key, bytes) = self.pending.remove(idx);
            self.applied.insert(key, bytes);
        }
    }
}

impl Backend for AdversarialBackend {
    fn read(&mut self, key: &StoreKey) -> Result<Option<Vec<u8>>, BackendError> {
        self.churn();
        Ok(self.applied.get(key).cloned())
    }

    fn write(&mut self, key: &StoreKey, bytes: &[u8]) -> Result<(), BackendError> {
        self.pending.push((key.clone(), bytes.to_vec()));
        self.churn();
        Ok(())
    }

    fn scan(&mut self) -> Result<Vec<StoreKey>, BackendError> {
        self.churn();
        let mut keys: Vec<StoreKey> = self.applied.keys().cloned().collect();
        for (key, _) in &self.pending {
            if !keys.contains(key) {
                keys.push(key.clone());
            }
        }
        keys.sort();
        Ok(keys)
    }
}
