//! Grow-only and observed-remove sets over opaque byte-string elements.

use std::collections::{BTreeMap, BTreeSet};

use super::dot::{ActorId, Dot, VersionVector};

/// Grow-only set: union merge, no removals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GSet {
    elements: BTreeSet<Vec<u8>>,
}

impl GSet {
    pub fn new() -> Self {
        GSet::default()
    }

    pub fn insert(&mut self, element: Vec<u8>) {
        self.elements.insert(element);
    }

    pub fn contains(&self, element: &[u8]) -> bool {
        self.elements.contains(element)
    }

    pub fn elements(&self) -> &BTreeSet<Vec<u8>> {
        &self.elements
    }

    pub fn merge(&mut self, other: &GSet) {
        for e in &other.elements {
            self.elements.insert(e.clone());
        }
    }
}

impl FromIterator<Vec<u8>> for GSet {
    fn from_iter<I: IntoIterator<Item = Vec<u8>>>(iter: I) -> Self {
        GSet {
            elements: iter.into_iter().collect(),
        }
    }
}

/// Observed-remove set in the tombstone-free dot-context representation.
///
/// Every add tags the element with a fresh dot; the causal context records
/// every dot this replica has ever observed. A remove deletes the element's
/// observed dots from `entries` while the context keeps covering them, which
/// is what lets a merge distinguish "removed" from "not yet seen": a dot
/// covered by the other side's context but missing from its entries was
/// observed and removed there, so it loses; a dot the other side's context
/// has never covered survives. Concurrent add and remove of the same element
/// therefore resolves to the element being present (add-wins).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OrSet {
    entries: BTreeMap<Vec<u8>, BTreeSet<Dot>>,
    context: VersionVector,
}

impl OrSet {
    pub fn new() -> Self {
        OrSet::default()
    }

    /// Add `element` with a fresh dot for `actor`.
    pub fn add(&mut self, element: Vec<u8>, actor: ActorId) -> Dot {
        let dot = self.context.next_dot(actor);
        self.entries.entry(element).or_default().insert(dot);
        self.context.observe(dot.actor, dot.counter);
        dot
    }

    /// Remove every dot currently observed for `element`. Dots added
    /// concurrently elsewhere are untouched and will survive a merge.
    pub fn remove(&mut self, element: &[u8]) {
        self.entries.remove(element);
    }

    pub fn contains(&self, element: &[u8]) -> bool {
        self.entries.contains_key(element)
    }

    pub fn elements(&self) -> BTreeSet<Vec<u8>> {
        self.entries.keys().cloned().collect()
    }

    pub fn dots(&self, element: &[u8]) -> Option<&BTreeSet<Dot>> {
        self.entries.get(element)
    }

    pub fn context(&self) -> &VersionVector {
        &self.context
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<u8>, &BTreeSet<Dot>)> {
        self.entries.iter()
    }

    pub fn merge(&mut self, other: &OrSet) {
        let mut merged: BTreeMap<Vec<u8>, BTreeSet<Dot>> = BTreeMap::new();
        let elements: BTreeSet<&Vec<u8>> =
            self.entries.keys().chain(other.entries.keys()).collect();
        for element in elements {
            let ours = self.entries.get(element);
            let theirs = other.entries.get(element);
            let mut keep = BTreeSet::new();
            if let Some(ours) = ours {
                for &dot in ours {
                    let observed_and_dropped = other.context.covers(dot)
                        && theirs.is_none_or(|dots| !dots.contains(&dot));
                    if !observed_and_dropped {
                        keep.insert(dot);
                    }
                }
            }
            if let Some(theirs) = theirs {
                for &dot in theirs {
                    let observed_and_dropped = self.context.covers(dot)
                        && ours.is_none_or(|dots| !dots.contains(&dot));
                    if !observed_and_dropped {
                        keep.insert(dot);
                    }
                }
            }
            if !keep.is_empty() {
                merged.insert(element.clone(), keep);
            }
        }
        self.entries = merged;
        self.context.merge(&other.context);
    }

    pub fn canonicalize(&mut self) {
        self.entries.retain(|_, dots| !dots.is_empty());
    }

    /// Invariant check: every dot in entries is covered by the context.
    pub fn is_well_formed(&self) -> bool {
        self.entries
            .values()
            .all(|dots| !dots.is_empty() && dots.iter().all(|&d| self.context.covers(d)))
    }

    pub(crate) fn from_parts(
        entries: BTreeMap<Vec<u8>, BTreeSet<Dot>>,
        context: VersionVector,
    ) -> Self {
        OrSet { entries, context }
    }
}
