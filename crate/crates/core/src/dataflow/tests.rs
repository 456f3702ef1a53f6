use std::collections::BTreeSet;

use super::*;
use crate::crdt::{encoding, query, Capability, CapabilitySet, Mutation, QueryResult};
use crate::replication::{NodeId, ReplicaNode, StaticMembership, SyncPolicy, TopologyKind};
use crate::storage::MemoryBackend;

fn key(name: &str) -> StoreKey {
    StoreKey::new(name).unwrap()
}

fn spec(id: &str, combinator: Combinator, sources: &[&str], sink: &str) -> DataflowSpec {
    DataflowSpec {
        id: id.to_string(),
        combinator,
        sources: sources.iter().map(|s| key(s)).collect(),
        sink: key(sink),
    }
}

fn set_caps(removable: bool) -> CapabilitySet {
    let mut caps = vec![Capability::Add, Capability::Read];
    if removable {
        caps.push(Capability::Remove);
    }
    CapabilitySet::new(caps).unwrap()
}

fn owner_node() -> (ReplicaNode<MemoryBackend>, StaticMembership) {
    let membership =
        StaticMembership::build(TopologyKind::FullMesh, &[NodeId(0), NodeId(1)]).unwrap();
    let mut node = ReplicaNode::new(NodeId(0), SyncPolicy::Immediate, 10, MemoryBackend::new(), 7);
    node.register_variable(key("gs"), CrdtTypeTag::GSet, Some(set_caps(false)))
        .unwrap();
    node.register_variable(key("os"), CrdtTypeTag::OrSet, Some(set_caps(true)))
        .unwrap();
    (node, membership)
}

fn elements(node: &mut ReplicaNode<MemoryBackend>, k: &str) -> BTreeSet<Vec<u8>> {
    let state = encoding::decode(node.store().get_bytes(&key(k)).unwrap()).unwrap();
    match query(&state) {
        QueryResult::Elements(e) => e,
        other => panic!("expected elements, got {other:?}"),
    }
}

fn add(node: &mut ReplicaNode<MemoryBackend>, membership: &StaticMembership, k: &str, e: &str) {
    node.on_local_update(
        membership,
        &key(k),
        &Mutation::Add {
            element: e.as_bytes().to_vec(),
        },
    )
    .unwrap();
}

// ---------------------------------------------------------------------------
// register
// ---------------------------------------------------------------------------

#[test]
fn map_over_gset_specializes_sink_to_gset() {
    let (mut node, _) = owner_node();
    node.register_dataflow(spec(
        "doubled",
        Combinator::Map {
            function: "double".into(),
        },
        &["gs"],
        "doubled",
    ))
    .unwrap();
    let decl = node
        .variables()
        .find(|(k, _)| k.as_str() == "doubled")
        .unwrap()
        .1
        .clone();
    assert_eq!(decl.tag, CrdtTypeTag::GSet);
}

#[test]
fn union_with_orset_source_forces_orset_sink() {
    let (mut node, _) = owner_node();
    node.register_dataflow(spec("all", Combinator::Union, &["gs", "os"], "all"))
        .unwrap();
    let decl = node
        .variables()
        .find(|(k, _)| k.as_str() == "all")
        .unwrap()
        .1
        .clone();
    assert_eq!(decl.tag, CrdtTypeTag::OrSet);
}

#[test]
fn sink_equal_to_source_is_a_cycle() {
    let (mut node, _) = owner_node();
    let err = node
        .register_dataflow(spec(
            "loop",
            Combinator::Map {
                function: "identity".into(),
            },
            &["gs"],
            "gs",
        ))
        .unwrap_err();
    assert!(err.to_string().contains("cycle"));
}

#[test]
fn chained_cycle_is_detected() {
    let (mut node, _) = owner_node();
    node.register_dataflow(spec(
        "s1",
        Combinator::Map {
            function: "identity".into(),
        },
        &["os"],
        "mid",
    ))
    .unwrap();
    // mid -> os would close the loop os -> mid -> os.
    let err = node
        .register_dataflow(spec(
            "s2",
            Combinator::Map {
                function: "identity".into(),
            },
            &["mid"],
            "os",
        ))
        .unwrap_err();
    assert!(matches!(
        err,
        crate::replication::ReplicationError::Dataflow(DataflowError::CycleDetected { .. })
    ));
}

#[test]
fn register_rejections() {
    let (mut node, _) = owner_node();

    let err = node
        .register_dataflow(spec(
            "bad_fn",
            Combinator::Map {
                function: "no_such_fn".into(),
            },
            &["gs"],
            "out1",
        ))
        .unwrap_err();
    assert!(err.to_string().contains("unknown function"));

    let err = node
        .register_dataflow(spec("bad_arity", Combinator::Union, &["gs"], "out2"))
        .unwrap_err();
    assert!(err.to_string().contains("takes 2 sources"));

    let err = node
        .register_dataflow(spec(
            "bad_source",
            Combinator::Filter {
                predicate: "even".into(),
            },
            &["nope"],
            "out3",
        ))
        .unwrap_err();
    assert!(err.to_string().contains("unknown source"));

    node.register_variable(
        key("cnt"),
        CrdtTypeTag::GCounter,
        Some(CapabilitySet::new([Capability::Increment]).unwrap()),
    )
    .unwrap();
    let err = node
        .register_dataflow(spec(
            "bad_type",
            Combinator::Map {
                function: "identity".into(),
            },
            &["cnt"],
            "out4",
        ))
        .unwrap_err();
    assert!(err.to_string().contains("set-typed"));
}

// ---------------------------------------------------------------------------
// propagate
// ---------------------------------------------------------------------------

#[test]
fn map_double_tracks_source() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "doubled",
        Combinator::Map {
            function: "double".into(),
        },
        &["gs"],
        "doubled",
    ))
    .unwrap();
    for e in ["1", "2", "3"] {
        add(&mut node, &membership, "gs", e);
    }
    let want: BTreeSet<Vec<u8>> = ["2", "4", "6"]
        .iter()
        .map(|s| s.as_bytes().to_vec())
        .collect();
    assert_eq!(elements(&mut node, "doubled"), want);
}

#[test]
fn filter_even_keeps_even_elements() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "evens",
        Combinator::Filter {
            predicate: "even".into(),
        },
        &["os"],
        "evens",
    ))
    .unwrap();
    for e in ["1", "2", "3", "4"] {
        add(&mut node, &membership, "os", e);
    }
    let want: BTreeSet<Vec<u8>> = ["2", "4"].iter().map(|s| s.as_bytes().to_vec()).collect();
    assert_eq!(elements(&mut node, "evens"), want);
}

#[test]
fn orset_sink_follows_removals() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "mirror",
        Combinator::Map {
            function: "identity".into(),
        },
        &["os"],
        "mirror",
    ))
    .unwrap();
    add(&mut node, &membership, "os", "x");
    add(&mut node, &membership, "os", "y");
    node.on_local_update(
        &membership,
        &key("os"),
        &Mutation::Remove {
            element: b"x".to_vec(),
        },
    )
    .unwrap();
    let want: BTreeSet<Vec<u8>> = [b"y".to_vec()].into_iter().collect();
    assert_eq!(elements(&mut node, "mirror"), want);
}

#[test]
fn intersection_of_two_sources() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "both",
        Combinator::Intersection,
        &["gs", "os"],
        "both",
    ))
    .unwrap();
    for e in ["a", "b"] {
        add(&mut node, &membership, "gs", e);
    }
    for e in ["b", "c"] {
        add(&mut node, &membership, "os", e);
    }
    let want: BTreeSet<Vec<u8>> = [b"b".to_vec()].into_iter().collect();
    assert_eq!(elements(&mut node, "both"), want);
}

#[test]
fn chained_specs_recompute_in_topological_order() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "stage1",
        Combinator::Filter {
            predicate: "even".into(),
        },
        &["gs"],
        "evens",
    ))
    .unwrap();
    node.register_dataflow(spec(
        "stage2",
        Combinator::Map {
            function: "double".into(),
        },
        &["evens"],
        "evens_doubled",
    ))
    .unwrap();
    for e in ["1", "2", "3", "4"] {
        add(&mut node, &membership, "gs", e);
    }
    let want: BTreeSet<Vec<u8>> = ["4", "8"].iter().map(|s| s.as_bytes().to_vec()).collect();
    assert_eq!(elements(&mut node, "evens_doubled"), want);
}

#[test]
fn propagate_is_idempotent_when_sources_unchanged() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "mirror",
        Combinator::Map {
            function: "identity".into(),
        },
        &["os"],
        "mirror",
    ))
    .unwrap();
    add(&mut node, &membership, "os", "x");
    let before = node.store().get_bytes(&key("mirror")).unwrap().to_vec();
    // Re-adding an element the set already holds leaves the source's
    // query unchanged, so the sink must not budge either.
    add(&mut node, &membership, "os", "x");
    let after = node.store().get_bytes(&key("mirror")).unwrap().to_vec();
    assert_eq!(
        elements(&mut node, "mirror"),
        [b"x".to_vec()].into_iter().collect::<BTreeSet<_>>()
    );
    assert_eq!(query(&encoding::decode(&before).unwrap()), query(&encoding::decode(&after).unwrap()));
}

#[test]
fn sink_changes_replicate_under_the_policy() {
    let (mut node, membership) = owner_node();
    node.register_dataflow(spec(
        "mirror",
        Combinator::Map {
            function: "identity".into(),
        },
        &["gs"],
        "mirror",
    ))
    .unwrap();
    let (_, envelopes) = node
        .on_local_update(
            &membership,
            &key("gs"),
            &Mutation::Add {
                element: b"z".to_vec(),
            },
        )
        .unwrap();
    // Immediate policy: one sync for the source and one for the sink.
    let keys: Vec<&str> = envelopes
        .iter()
        .filter_map(|e| e.key.as_ref().map(StoreKey::as_str))
        .collect();
    assert_eq!(keys, vec!["gs", "mirror"]);
}

// ---------------------------------------------------------------------------
// builtin registry
// ---------------------------------------------------------------------------

#[test]
fn builtin_functions_are_total() {
    let registry = FunctionRegistry::builtin();
    let double = registry.map("double").unwrap();
    assert_eq!(double(b"21"), b"42".to_vec());
    assert_eq!(double(b"ab"), b"abab".to_vec());
    assert_eq!(double(b""), b"".to_vec());

    let even = registry.predicate("even").unwrap();
    assert!(even(b"4"));
    assert!(!even(b"3"));
    assert!(!even(b"not-a-number"));

    let upper = registry.map("upper").unwrap();
    assert_eq!(upper(b"aB3"), b"AB3".to_vec());
}
