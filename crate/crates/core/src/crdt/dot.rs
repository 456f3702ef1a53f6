//! Replica identity and causal tagging: actors, dots, and version vectors.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Identity of one replica process. The numeric total order is used for
/// deterministic tie-breaking (register writes, digest rotation).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ActorId(pub u64);

impl std::fmt::Display for ActorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One mutation event: the pair (actor, per-actor sequence number).
/// Counters start at 1, so a version vector entry of 0 means "nothing seen"
/// and is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dot {
    pub actor: ActorId,
    pub counter: u64,
}

impl Dot {
    pub fn new(actor: ActorId, counter: u64) -> Self {
        debug_assert!(counter >= 1, "dot counters start at 1");
        Dot { actor, counter }
    }
}

/// Map from actor to the highest event counter observed for that actor.
///
/// The partial order is pointwise: `a <= b` iff every entry of `a` is `<=`
/// the corresponding entry of `b`, with missing entries reading as 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VersionVector {
    entries: BTreeMap<ActorId, u64>,
}

impl VersionVector {
    pub fn new() -> Self {
        VersionVector::default()
    }

    pub fn get(&self, actor: ActorId) -> u64 {
        self.entries.get(&actor).copied().unwrap_or(0)
    }

    /// True when this vector has observed the dot.
    pub fn covers(&self, dot: Dot) -> bool {
        dot.counter <= self.get(dot.actor)
    }

    /// Raise the actor's entry to at least `counter`. Zero is a no-op so
    /// the "no zero entries stored" invariant holds by construction.
    pub fn observe(&mut self, actor: ActorId, counter: u64) {
        if counter == 0 {
            return;
        }
        let e = self.entries.entry(actor).or_insert(0);
        if counter > *e {
            *e = counter;
        }
    }

    /// The next fresh dot for `actor` relative to what this vector covers.
    pub fn next_dot(&self, actor: ActorId) -> Dot {
        Dot::new(actor, self.get(actor) + 1)
    }

    /// Pointwise maximum.
    pub fn merge(&mut self, other: &VersionVector) {
        for (&actor, &counter) in &other.entries {
            self.observe(actor, counter);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ActorId, u64)> + '_ {
        self.entries.iter().map(|(&a, &c)| (a, c))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pointwise partial order; `None` when the vectors are concurrent.
    pub fn partial_cmp(&self, other: &VersionVector) -> Option<Ordering> {
        let mut le = true;
        let mut ge = true;
        for (&actor, &counter) in &self.entries {
            let o = other.get(actor);
            if counter > o {
                le = false;
            }
            if counter < o {
                ge = false;
            }
        }
        for (&actor, &counter) in &other.entries {
            if self.get(actor) < counter {
                ge = false;
            }
        }
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

impl FromIterator<(ActorId, u64)> for VersionVector {
    fn from_iter<I: IntoIterator<Item = (ActorId, u64)>>(iter: I) -> Self {
        let mut vv = VersionVector::new();
        for (actor, counter) in iter {
            vv.observe(actor, counter);
        }
        vv
    }
}
