//! Declared capabilities and the implementation selector.
//!
//! A variable declares up front which operations its application will ever
//! perform; the runtime then picks the cheapest representation that supports
//! them. A collection that never removes gets a grow-only set instead of an
//! observed-remove set, saving the dot and context metadata.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CrdtError, CrdtTypeTag};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Add,
    Remove,
    Read,
    Increment,
    Decrement,
    Assign,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Capability::Add => "add",
            Capability::Remove => "remove",
            Capability::Read => "read",
            Capability::Increment => "increment",
            Capability::Decrement => "decrement",
            Capability::Assign => "assign",
        };
        f.write_str(s)
    }
}

/// Non-empty set of capability flags. `remove` implies `add` and
/// `decrement` implies `increment`; construction rejects violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeSet<Capability>", into = "BTreeSet<Capability>")]
pub struct CapabilitySet {
    flags: BTreeSet<Capability>,
}

impl CapabilitySet {
    pub fn new<I: IntoIterator<Item = Capability>>(flags: I) -> Result<Self, CrdtError> {
        let flags: BTreeSet<Capability> = flags.into_iter().collect();
        if flags.is_empty() {
            return Err(CrdtError::InvalidCapabilities(
                "capability set must be non-empty".into(),
            ));
        }
        if flags.contains(&Capability::Remove) && !flags.contains(&Capability::Add) {
            return Err(CrdtError::InvalidCapabilities(
                "remove requires add".into(),
            ));
        }
        if flags.contains(&Capability::Decrement) && !flags.contains(&Capability::Increment) {
            return Err(CrdtError::InvalidCapabilities(
                "decrement requires increment".into(),
            ));
        }
        Ok(CapabilitySet { flags })
    }

    pub fn contains(&self, cap: Capability) -> bool {
        self.flags.contains(&cap)
    }

    pub fn iter(&self) -> impl Iterator<Item = Capability> + '_ {
        self.flags.iter().copied()
    }
}

impl TryFrom<BTreeSet<Capability>> for CapabilitySet {
    type Error = CrdtError;
    fn try_from(flags: BTreeSet<Capability>) -> Result<Self, Self::Error> {
        CapabilitySet::new(flags)
    }
}

impl From<CapabilitySet> for BTreeSet<Capability> {
    fn from(caps: CapabilitySet) -> Self {
        caps.flags
    }
}

/// The abstract shape a variable is declared as; capabilities refine the
/// shape into a concrete representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Collection,
    Counter,
    Register,
}

/// Pick the cheapest representation that supports the declared capabilities.
///
/// Collections without `remove` specialize to [`CrdtTypeTag::GCounter`]'s
/// set analogue, the grow-only set; counters without `decrement` to the
/// grow-only counter. The function is pure: the same inputs always select
/// the same tag.
pub fn select_implementation(
    caps: &CapabilitySet,
    kind: VariableKind,
) -> Result<CrdtTypeTag, CrdtError> {
    let unsupported = |cap: Capability| {
        Err(CrdtError::UnsatisfiableCapabilities {
            kind,
            capability: cap,
        })
    };
    match kind {
        VariableKind::Collection => {
            for cap in caps.iter() {
                match cap {
                    Capability::Add | Capability::Remove | Capability::Read => {}
                    other => return unsupported(other),
                }
            }
            if !caps.contains(Capability::Add) {
                return unsupported(Capability::Read);
            }
            if caps.contains(Capability::Remove) {
                Ok(CrdtTypeTag::OrSet)
            } else {
                Ok(CrdtTypeTag::GSet)
            }
        }
        VariableKind::Counter => {
            for cap in caps.iter() {
                match cap {
                    Capability::Increment | Capability::Decrement | Capability::Read => {}
                    other => return unsupported(other),
                }
            }
            if !caps.contains(Capability::Increment) {
                return unsupported(Capability::Read);
            }
            if caps.contains(Capability::Decrement) {
                Ok(CrdtTypeTag::PnCounter)
            } else {
                Ok(CrdtTypeTag::GCounter)
            }
        }
        VariableKind::Register => {
            for cap in caps.iter() {
                match cap {
                    Capability::Assign | Capability::Read => {}
                    other => return unsupported(other),
                }
            }
            if !caps.contains(Capability::Assign) {
                return unsupported(Capability::Read);
            }
            Ok(CrdtTypeTag::LwwRegister)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Capability::*;

    fn caps(flags: &[Capability]) -> CapabilitySet {
        CapabilitySet::new(flags.iter().copied()).unwrap()
    }

    #[test]
    fn add_only_collection_specializes_to_gset() {
        assert_eq!(
            select_implementation(&caps(&[Add, Read]), VariableKind::Collection).unwrap(),
            CrdtTypeTag::GSet
        );
    }

    #[test]
    fn removable_collection_needs_orset() {
        assert_eq!(
            select_implementation(&caps(&[Add, Remove, Read]), VariableKind::Collection).unwrap(),
            CrdtTypeTag::OrSet
        );
    }

    #[test]
    fn counter_selection() {
        assert_eq!(
            select_implementation(&caps(&[Increment]), VariableKind::Counter).unwrap(),
            CrdtTypeTag::GCounter
        );
        assert_eq!(
            select_implementation(&caps(&[Increment, Decrement]), VariableKind::Counter).unwrap(),
            CrdtTypeTag::PnCounter
        );
    }

    #[test]
    fn register_selection() {
        assert_eq!(
            select_implementation(&caps(&[Assign, Read]), VariableKind::Register).unwrap(),
            CrdtTypeTag::LwwRegister
        );
    }

    #[test]
    fn cross_kind_capabilities_rejected() {
        assert!(matches!(
            select_implementation(&caps(&[Add, Remove, Read]), VariableKind::Counter),
            Err(CrdtError::UnsatisfiableCapabilities { .. })
        ));
        assert!(matches!(
            select_implementation(&caps(&[Increment]), VariableKind::Collection),
            Err(CrdtError::UnsatisfiableCapabilities { .. })
        ));
        assert!(matches!(
            select_implementation(&caps(&[Assign]), VariableKind::Counter),
            Err(CrdtError::UnsatisfiableCapabilities { .. })
        ));
    }

    #[test]
    fn implication_invariants_enforced() {
        assert!(CapabilitySet::new([]).is_err());
        assert!(CapabilitySet::new([Remove, Read]).is_err());
        assert!(CapabilitySet::new([Decrement]).is_err());
        assert!(CapabilitySet::new([Remove, Add]).is_ok());
    }

    #[test]
    fn selection_is_pure() {
        let c = caps(&[Add, Read]);
        let first = select_implementation(&c, VariableKind::Collection).unwrap();
        for _ in 0..10 {
            assert_eq!(
                select_implementation(&c, VariableKind::Collection).unwrap(),
                first
            );
        }
    }
}
