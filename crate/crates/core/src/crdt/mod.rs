//! Lattice value types, mutators, queries, the merge function, and the
//! capability-driven implementation selector.
//!
//! Every operation returns a new value; nothing here mutates shared state.
//! Merge computes the join (least upper bound) of two states of the same
//! variant, and all five variants satisfy the join-semilattice laws under
//! canonical equality: idempotent, commutative, associative, inflationary.

mod capability;
mod counter;
mod dot;
pub mod encoding;
mod register;
mod set;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use capability::{select_implementation, Capability, CapabilitySet, VariableKind};
pub use counter::{GCounter, PnCounter};
pub use dot::{ActorId, Dot, VersionVector};
pub use encoding::DecodeError;
pub use register::LwwRegister;
pub use set::{GSet, OrSet};

/// Wire/storage tag identifying a variant. The numeric values are part of
/// the canonical binary encoding and must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrdtTypeTag {
    GCounter,
    PnCounter,
    GSet,
    OrSet,
    LwwRegister,
}

impl CrdtTypeTag {
    pub fn to_byte(self) -> u8 {
        match self {
            CrdtTypeTag::GCounter => 1,
            CrdtTypeTag::PnCounter => 2,
            CrdtTypeTag::GSet => 3,
            CrdtTypeTag::OrSet => 4,
            CrdtTypeTag::LwwRegister => 5,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(CrdtTypeTag::GCounter),
            2 => Some(CrdtTypeTag::PnCounter),
            3 => Some(CrdtTypeTag::GSet),
            4 => Some(CrdtTypeTag::OrSet),
            5 => Some(CrdtTypeTag::LwwRegister),
            _ => None,
        }
    }

    /// True when the variant's query result is an element set.
    pub fn is_set(self) -> bool {
        matches!(self, CrdtTypeTag::GSet | CrdtTypeTag::OrSet)
    }
}

impl std::fmt::Display for CrdtTypeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CrdtTypeTag::GCounter => "g_counter",
            CrdtTypeTag::PnCounter => "pn_counter",
            CrdtTypeTag::GSet => "g_set",
            CrdtTypeTag::OrSet => "or_set",
            CrdtTypeTag::LwwRegister => "lww_register",
        };
        f.write_str(s)
    }
}

/// Tagged lattice state: one of the five replicated value types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrdtValue {
    GCounter(GCounter),
    PnCounter(PnCounter),
    GSet(GSet),
    OrSet(OrSet),
    LwwRegister(LwwRegister),
}

/// A state mutation originated at one actor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Increment,
    Decrement,
    Add {
        #[serde(with = "encoding::serde_bytes_as_string")]
        element: Vec<u8>,
    },
    Remove {
        #[serde(with = "encoding::serde_bytes_as_string")]
        element: Vec<u8>,
    },
    Assign {
        #[serde(with = "encoding::serde_bytes_as_string")]
        value: Vec<u8>,
    },
}

impl Mutation {
    pub fn name(&self) -> &'static str {
        match self {
            Mutation::Increment => "increment",
            Mutation::Decrement => "decrement",
            Mutation::Add { .. } => "add",
            Mutation::Remove { .. } => "remove",
            Mutation::Assign { .. } => "assign",
        }
    }

    /// The capability a variable must declare for this mutation.
    pub fn required_capability(&self) -> Capability {
        match self {
            Mutation::Increment => Capability::Increment,
            Mutation::Decrement => Capability::Decrement,
            Mutation::Add { .. } => Capability::Add,
            Mutation::Remove { .. } => Capability::Remove,
            Mutation::Assign { .. } => Capability::Assign,
        }
    }
}

/// Deterministic read of a state's current value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryResult {
    Counter(i64),
    Elements(BTreeSet<Vec<u8>>),
    Register(Option<Vec<u8>>),
}

/// Lattice comparison outcome. `Concurrent` means neither state dominates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeOrdering {
    Less,
    Equal,
    Greater,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("variant mismatch: {left} vs {right}")]
    VariantMismatch { left: CrdtTypeTag, right: CrdtTypeTag },
    #[error("mutation {mutation} is illegal for {tag}")]
    IllegalMutation { tag: CrdtTypeTag, mutation: String },
    #[error("remove on a grow-only set: variable was specialized without the remove capability")]
    RemoveFromGSet,
    #[error("capability {capability} cannot be satisfied by any {kind:?} implementation")]
    UnsatisfiableCapabilities { kind: VariableKind, capability: Capability },
    #[error("invalid capability set: {0}")]
    InvalidCapabilities(String),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}

impl CrdtValue {
    /// The empty (bottom) state of a variant: identity element of merge.
    pub fn bottom(tag: CrdtTypeTag) -> CrdtValue {
        match tag {
            CrdtTypeTag::GCounter => CrdtValue::GCounter(GCounter::new()),
            CrdtTypeTag::PnCounter => CrdtValue::PnCounter(PnCounter::new()),
            CrdtTypeTag::GSet => CrdtValue::GSet(GSet::new()),
            CrdtTypeTag::OrSet => CrdtValue::OrSet(OrSet::new()),
            CrdtTypeTag::LwwRegister => CrdtValue::LwwRegister(LwwRegister::new()),
        }
    }

    pub fn tag(&self) -> CrdtTypeTag {
        match self {
            CrdtValue::GCounter(_) => CrdtTypeTag::GCounter,
            CrdtValue::PnCounter(_) => CrdtTypeTag::PnCounter,
            CrdtValue::GSet(_) => CrdtTypeTag::GSet,
            CrdtValue::OrSet(_) => CrdtTypeTag::OrSet,
            CrdtValue::LwwRegister(_) => CrdtTypeTag::LwwRegister,
        }
    }

    pub fn is_bottom(&self) -> bool {
        *self == CrdtValue::bottom(self.tag())
    }
}

/// Join (least upper bound) of two states of the same variant.
pub fn merge(a: &CrdtValue, b: &CrdtValue) -> Result<CrdtValue, CrdtError> {
    let mut out = a.clone();
    match (&mut out, b) {
        (CrdtValue::GCounter(x), CrdtValue::GCounter(y)) => x.merge(y),
        (CrdtValue::PnCounter(x), CrdtValue::PnCounter(y)) => x.merge(y),
        (CrdtValue::GSet(x), CrdtValue::GSet(y)) => x.merge(y),
        (CrdtValue::OrSet(x), CrdtValue::OrSet(y)) => x.merge(y),
        (CrdtValue::LwwRegister(x), CrdtValue::LwwRegister(y)) => x.merge(y),
        _ => {
            return Err(CrdtError::VariantMismatch {
                left: a.tag(),
                right: b.tag(),
            })
        }
    }
    Ok(canonicalize(out))
}

/// Apply a mutation at `actor`, returning the new state.
pub fn update(v: &CrdtValue, mutation: &Mutation, actor: ActorId) -> Result<CrdtValue, CrdtError> {
    let illegal = || CrdtError::IllegalMutation {
        tag: v.tag(),
        mutation: mutation.name().to_string(),
    };
    let mut out = v.clone();
    match (&mut out, mutation) {
        (CrdtValue::GCounter(c), Mutation::Increment) => c.increment(actor),
        (CrdtValue::PnCounter(c), Mutation::Increment) => c.increment(actor),
        (CrdtValue::PnCounter(c), Mutation::Decrement) => c.decrement(actor),
        (CrdtValue::GSet(s), Mutation::Add { element }) => s.insert(element.clone()),
        (CrdtValue::GSet(_), Mutation::Remove { .. }) => return Err(CrdtError::RemoveFromGSet),
        (CrdtValue::OrSet(s), Mutation::Add { element }) => {
            s.add(element.clone(), actor);
        }
        (CrdtValue::OrSet(s), Mutation::Remove { element }) => s.remove(element),
        (CrdtValue::LwwRegister(r), Mutation::Assign { value }) => r.assign(value.clone(), actor),
        _ => return Err(illegal()),
    }
    Ok(canonicalize(out))
}

/// Pure read of the current value.
pub fn query(v: &CrdtValue) -> QueryResult {
    match v {
        CrdtValue::GCounter(c) => {
            QueryResult::Counter(i64::try_from(c.total()).unwrap_or(i64::MAX))
        }
        CrdtValue::PnCounter(c) => QueryResult::Counter(c.value()),
        CrdtValue::GSet(s) => QueryResult::Elements(s.elements().clone()),
        CrdtValue::OrSet(s) => QueryResult::Elements(s.elements()),
        CrdtValue::LwwRegister(r) => QueryResult::Register(r.get().map(<[u8]>::to_vec)),
    }
}

/// Lattice comparison: `a <= b` iff `merge(a, b) == b` under canonical
/// equality.
pub fn compare(a: &CrdtValue, b: &CrdtValue) -> Result<LatticeOrdering, CrdtError> {
    let joined = merge(a, b)?;
    let le = joined == canonicalize(b.clone());
    let ge = joined == canonicalize(a.clone());
    Ok(match (le, ge) {
        (true, true) => LatticeOrdering::Equal,
        (true, false) => LatticeOrdering::Less,
        (false, true) => LatticeOrdering::Greater,
        (false, false) => LatticeOrdering::Concurrent,
    })
}

/// Drop zero counter entries, empty dot sets, and degenerate register
/// state. Idempotent; map/set ordering is inherent to the B-tree backing.
pub fn canonicalize(mut v: CrdtValue) -> CrdtValue {
    match &mut v {
        CrdtValue::GCounter(c) => c.canonicalize(),
        CrdtValue::PnCounter(c) => c.canonicalize(),
        CrdtValue::GSet(_) => {}
        CrdtValue::OrSet(s) => s.canonicalize(),
        CrdtValue::LwwRegister(r) => r.canonicalize(),
    }
    v
}
