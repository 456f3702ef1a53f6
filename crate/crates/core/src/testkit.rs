//! Seeded generators for lattice states and mutation traces, shared by the
//! property suites in this crate and the acceptance harness downstream.
//!
//! Everything here is driven by [`SplitMix64`], so a seed pins the exact
//! sequence of generated cases.

use crate::crdt::{
    update, ActorId, CrdtTypeTag, CrdtValue, GCounter, GSet, LwwRegister, Mutation, OrSet,
    PnCounter,
};
use crate::rng::SplitMix64;

pub const ALL_TAGS: [CrdtTypeTag; 5] = [
    CrdtTypeTag::GCounter,
    CrdtTypeTag::PnCounter,
    CrdtTypeTag::GSet,
    CrdtTypeTag::OrSet,
    CrdtTypeTag::LwwRegister,
];

/// Random-state generator over a small actor/element universe, sized so
/// generated states actually collide and conflict.
pub struct StateGen {
    pub rng: SplitMix64,
    pub actors: u64,
    pub elements: u64,
}

impl StateGen {
    pub fn new(seed: u64) -> Self {
        StateGen {
            rng: SplitMix64::new(seed),
            actors: 4,
            elements: 8,
        }
    }

    fn element(&mut self) -> Vec<u8> {
        format!("e{}", self.rng.below(self.elements)).into_bytes()
    }

    fn actor(&mut self) -> ActorId {
        ActorId(self.rng.below(self.actors))
    }

    pub fn state(&mut self, tag: CrdtTypeTag) -> CrdtValue {
        match tag {
            CrdtTypeTag::GCounter => {
                let mut c = GCounter::new();
                for _ in 0..self.rng.below(6) {
                    let actor = self.actor();
                    for _ in 0..=self.rng.below(20) {
                        c.increment(actor);
                    }
                }
                CrdtValue::GCounter(c)
            }
            CrdtTypeTag::PnCounter => {
                let mut c = PnCounter::new();
                for _ in 0..self.rng.below(10) {
                    let actor = self.actor();
                    if self.rng.chance(0.5) {
                        c.increment(actor);
                    } else {
                        c.decrement(actor);
                    }
                }
                CrdtValue::PnCounter(c)
            }
            CrdtTypeTag::GSet => {
                let mut s = GSet::new();
                for _ in 0..self.rng.below(8) {
                    let e = self.element();
                    s.insert(e);
                }
                CrdtValue::GSet(s)
            }
            CrdtTypeTag::OrSet => {
                // Replayed mutation history keeps dots covered by the
                // context, which arbitrary struct filling would not.
                let mut s = OrSet::new();
                for _ in 0..self.rng.below(12) {
                    let e = self.element();
                    if self.rng.chance(0.3) && s.contains(&e) {
                        s.remove(&e);
                    } else {
                        let actor = self.actor();
                        s.add(e, actor);
                    }
                }
                CrdtValue::OrSet(s)
            }
            CrdtTypeTag::LwwRegister => {
                // The value is a pure function of (timestamp, writer): any
                // two generated replicas then agree on what a given write
                // was, as real replicas of one history would.
                let mut r = LwwRegister::new();
                for _ in 0..self.rng.below(4) {
                    let actor = self.actor();
                    let v = format!("v{}-{}", r.timestamp + 1, actor).into_bytes();
                    r.assign(v, actor);
                }
                CrdtValue::LwwRegister(r)
            }
        }
    }

    /// A random mutation legal for the variant. `allow_remove`/`allow_dec`
    /// model the declared capabilities.
    pub fn mutation(&mut self, tag: CrdtTypeTag, allow_remove: bool, allow_dec: bool) -> Mutation {
        match tag {
            CrdtTypeTag::GCounter => Mutation::Increment,
            CrdtTypeTag::PnCounter => {
                if allow_dec && self.rng.chance(0.4) {
                    Mutation::Decrement
                } else {
                    Mutation::Increment
                }
            }
            CrdtTypeTag::GSet => Mutation::Add {
                element: self.element(),
            },
            CrdtTypeTag::OrSet => {
                if allow_remove && self.rng.chance(0.35) {
                    Mutation::Remove {
                        element: self.element(),
                    }
                } else {
                    Mutation::Add {
                        element: self.element(),
                    }
                }
            }
            CrdtTypeTag::LwwRegister => Mutation::Assign {
                value: self.element(),
            },
        }
    }
}

/// Replay a mutation sequence on a single replica, skipping mutations that
/// are illegal for the capability shape (the independent oracle for the
/// single-replica update examples).
pub fn replay(tag: CrdtTypeTag, trace: &[(ActorId, Mutation)]) -> CrdtValue {
    let mut v = CrdtValue::bottom(tag);
    for (actor, m) in trace {
        if let Ok(next) = update(&v, m, *actor) {
            v = next;
        }
    }
    v
}
