//! Grow-only and increment/decrement counters.

use std::collections::BTreeMap;

use super::dot::ActorId;

/// Grow-only counter: per-actor non-negative counts, merged by pointwise
/// maximum. Canonical form stores no zero entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GCounter {
    entries: BTreeMap<ActorId, u64>,
}

impl GCounter {
    pub fn new() -> Self {
        GCounter::default()
    }

    pub fn get(&self, actor: ActorId) -> u64 {
        self.entries.get(&actor).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, actor: ActorId) {
        *self.entries.entry(actor).or_insert(0) += 1;
    }

    /// Sum of all per-actor counts.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn merge(&mut self, other: &GCounter) {
        for (&actor, &count) in &other.entries {
            let e = self.entries.entry(actor).or_insert(0);
            if count > *e {
                *e = count;
            }
        }
    }

    pub fn canonicalize(&mut self) {
        self.entries.retain(|_, count| *count > 0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ActorId, u64)> + '_ {
        self.entries.iter().map(|(&a, &c)| (a, c))
    }

    pub(crate) fn set_entry(&mut self, actor: ActorId, count: u64) {
        if count > 0 {
            self.entries.insert(actor, count);
        }
    }
}

impl FromIterator<(ActorId, u64)> for GCounter {
    fn from_iter<I: IntoIterator<Item = (ActorId, u64)>>(iter: I) -> Self {
        let mut c = GCounter::new();
        for (actor, count) in iter {
            c.set_entry(actor, count);
        }
        c
    }
}

/// Counter supporting increments and decrements: two grow-only components,
/// one counting increments (`inc`) and one counting decrements (`dec`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PnCounter {
    pub inc: GCounter,
    pub dec: GCounter,
}

impl PnCounter {
    pub fn new() -> Self {
        PnCounter::default()
    }

    pub fn increment(&mut self, actor: ActorId) {
        self.inc.increment(actor);
    }

    pub fn decrement(&mut self, actor: ActorId) {
        self.dec.increment(actor);
    }

    pub fn value(&self) -> i64 {
        let v = i128::from(self.inc.total()) - i128::from(self.dec.total());
        v.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64
    }

    pub fn merge(&mut self, other: &PnCounter) {
        self.inc.merge(&other.inc);
        self.dec.merge(&other.dec);
    }

    pub fn canonicalize(&mut self) {
        self.inc.canonicalize();
        self.dec.canonicalize();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: u64) -> ActorId {
        ActorId(n)
    }

    #[test]
    fn gcounter_merge_pointwise_max() {
        let x: GCounter = [(a(1), 1), (a(2), 2)].into_iter().collect();
        let y: GCounter = [(a(1), 3)].into_iter().collect();
        let mut m = x.clone();
        m.merge(&y);
        let want: GCounter = [(a(1), 3), (a(2), 2)].into_iter().collect();
        assert_eq!(m, want);
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn pncounter_value() {
        let mut c = PnCounter::new();
        for _ in 0..5 {
            c.increment(a(1));
        }
        for _ in 0..2 {
            c.decrement(a(1));
        }
        assert_eq!(c.value(), 3);
    }

    #[test]
    fn canonical_drops_zero_entries() {
        let mut c = GCounter::new();
        c.entries.insert(a(1), 0);
        c.entries.insert(a(2), 2);
        c.canonicalize();
        let want: GCounter = [(a(2), 2)].into_iter().collect();
        assert_eq!(c, want);
    }
}
