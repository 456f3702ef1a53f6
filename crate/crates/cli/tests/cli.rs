use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use lattice_cli::{
    cmd_matrix, cmd_run, cmd_validate, RunOverrides, EXIT_INVALID_SCENARIO,
    EXIT_INVARIANCE_VIOLATION, EXIT_IO, EXIT_NO_CONVERGENCE, EXIT_OK,
};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run_lib(path: &Path, overrides: &RunOverrides) -> (i32, String) {
    let mut out = Vec::new();
    let code = cmd_run(path, overrides, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn validate_lib(path: &Path) -> (i32, String) {
    let mut out = Vec::new();
    let code = cmd_validate(path, &mut out);
    (code, String::from_utf8(out).unwrap())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[test]
fn validate_accepts_every_bundled_scenario() {
    let dir = scenario_path("");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let (code, out) = validate_lib(&path);
            assert_eq!(code, EXIT_OK, "{}: {out}", path.display());
            assert_eq!(out, "OK\n");
            count += 1;
        }
    }
    assert!(count >= 10, "bundled corpus must stay at 10+ scenarios");
}

#[test]
fn validate_reports_fanout_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut scenario: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario_path("mesh5_lossy.json")).unwrap())
            .unwrap();
    scenario["topology"] = serde_json::json!({"kind": "peer_to_peer", "fanout": 5, "seed": 1});
    fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();

    let (code, out) = validate_lib(&path);
    assert_eq!(code, EXIT_INVALID_SCENARIO);
    assert!(out.contains("topology.fanout"), "got: {out}");
}

#[test]
fn validate_reports_unknown_dataflow_source() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut scenario: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario_path("mesh5_lossy.json")).unwrap())
            .unwrap();
    scenario["dataflow"] = serde_json::json!([
        {"id": "b", "combinator": {"op": "map", "function": "double"},
         "sources": ["ghost"], "sink": "out"}
    ]);
    fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();

    let (code, out) = validate_lib(&path);
    assert_eq!(code, EXIT_INVALID_SCENARIO);
    assert!(out.contains("dataflow[0].sources"), "got: {out}");
}

#[test]
fn validate_io_and_parse_failures() {
    let (code, _) = validate_lib(Path::new("/nonexistent/nope.json"));
    assert_eq!(code, EXIT_IO);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    let (code, out) = validate_lib(&path);
    assert_eq!(code, EXIT_INVALID_SCENARIO);
    assert!(out.starts_with("file.parse:"));
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[test]
fn run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    let scenario = scenario_path("mesh5_lossy.json");

    let (code, summary_a) = run_lib(
        &scenario,
        &RunOverrides {
            out: Some(out_a.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK, "{summary_a}");
    let (code, summary_b) = run_lib(
        &scenario,
        &RunOverrides {
            out: Some(out_b.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(summary_a, summary_b);
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
}

#[test]
fn seed_override_changes_metrics_not_validity() {
    let dir = tempfile::tempdir().unwrap();
    let out_default = dir.path().join("default.json");
    let out_seeded = dir.path().join("seeded.json");
    let scenario = scenario_path("mesh5_lossy.json");

    let (code, _) = run_lib(
        &scenario,
        &RunOverrides {
            out: Some(out_default.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK);
    let (code, _) = run_lib(
        &scenario,
        &RunOverrides {
            seed: Some(777),
            out: Some(out_seeded.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK, "override must still converge and validate");
    assert_ne!(fs::read(&out_default).unwrap(), fs::read(&out_seeded).unwrap());
}

#[test]
fn run_matches_pinned_golden_metrics() {
    let golden = scenario_path("golden/mesh5_lossy.metrics.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let (code, _) = run_lib(
        &scenario_path("mesh5_lossy.json"),
        &RunOverrides {
            out: Some(out.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(&golden).unwrap(),
        "run output drifted from the pinned golden metrics"
    );
}

#[test]
fn unhealed_partition_exits_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stuck.json");
    fs::write(
        &path,
        serde_json::json!({
            "nodes": 2,
            "topology": {"kind": "full_mesh"},
            "sync_policy": {"policy": "immediate"},
            "variables": [
                {"key": "hits", "kind": "counter", "capabilities": ["increment"]}
            ],
            "faults": {"partitions": [
                {"from_tick": 0, "to_tick": 1000, "side_a": [0], "side_b": [1]}
            ]},
            "trace": {"ops": [
                {"tick": 1, "node": 0, "key": "hits", "mutation": {"op": "increment"}}
            ]},
            "duration": 50,
            "seed": 1
        })
        .to_string(),
    )
    .unwrap();
    let (code, out) = run_lib(&path, &RunOverrides::default());
    assert_eq!(code, EXIT_NO_CONVERGENCE);
    assert!(out.contains("converged=false"));
}

#[test]
fn event_log_is_written_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let log_a = dir.path().join("a.log");
    let log_b = dir.path().join("b.log");
    for log in [&log_a, &log_b] {
        let (code, _) = run_lib(
            &scenario_path("star4_basic.json"),
            &RunOverrides {
                out: Some(dir.path().join("m.json")),
                event_log: Some(log.clone()),
                ..RunOverrides::default()
            },
        );
        assert_eq!(code, EXIT_OK);
    }
    let text = fs::read_to_string(&log_a).unwrap();
    assert_eq!(text, fs::read_to_string(&log_b).unwrap());
    // tick \t seq \t kind \t from \t to \t key
    let first = text.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 6);
    assert!(text.lines().any(|l| l.contains("state_sync")));
    assert!(text.lines().any(|l| l.contains("local_op")));
}

// ---------------------------------------------------------------------------
// matrix
// ---------------------------------------------------------------------------

#[test]
fn matrix_demo_is_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    let code = cmd_matrix(
        &scenario_path("matrix_demo.json"),
        Some(dir.path()),
        false,
        &mut out,
    );
    let text = String::from_utf8(out).unwrap();
    assert_eq!(code, EXIT_OK, "{text}");
    assert!(text.contains("all 9 runs converged to identical digests"));
    assert_eq!(
        fs::read_dir(dir.path()).unwrap().count(),
        9,
        "one metrics file per cell"
    );
}

#[test]
fn matrix_single_node_is_trivially_invariant() {
    let mut out = Vec::new();
    let code = cmd_matrix(&scenario_path("single_node.json"), None, false, &mut out);
    assert_eq!(code, EXIT_OK, "{}", String::from_utf8(out).unwrap());
}

#[test]
fn matrix_corrupt_hook_trips_exit_4() {
    let mut out = Vec::new();
    let code = cmd_matrix(&scenario_path("matrix_demo.json"), None, true, &mut out);
    assert_eq!(code, EXIT_INVARIANCE_VIOLATION);
    assert!(String::from_utf8(out)
        .unwrap()
        .contains("invariance violation"));
}

// ---------------------------------------------------------------------------
// the binary is a thin shell over the library
// ---------------------------------------------------------------------------

#[test]
fn binary_and_library_produce_identical_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let lib_out = dir.path().join("lib.json");
    let bin_out = dir.path().join("bin.json");
    let scenario = scenario_path("p2p10_fanout2.json");

    let (code, lib_summary) = run_lib(
        &scenario,
        &RunOverrides {
            seed: Some(99),
            out: Some(lib_out.clone()),
            ..RunOverrides::default()
        },
    );
    assert_eq!(code, EXIT_OK);

    let output = Command::new(env!("CARGO_BIN_EXE_lattice"))
        .args([
            "run",
            scenario.to_str().unwrap(),
            "--seed",
            "99",
            "--out",
            bin_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(String::from_utf8(output.stdout).unwrap(), lib_summary);
    assert_eq!(fs::read(&lib_out).unwrap(), fs::read(&bin_out).unwrap());
}

#[test]
fn binary_exit_codes_match_library() {
    let cases: [(&str, Vec<&str>, i32); 3] = [
        ("validate", vec!["/nonexistent.json"], EXIT_IO),
        ("run", vec!["/nonexistent.json"], EXIT_IO),
        ("matrix", vec!["/nonexistent.json"], EXIT_IO),
    ];
    for (cmd, args, want) in cases {
        let output = Command::new(env!("CARGO_BIN_EXE_lattice"))
            .arg(cmd)
            .args(&args)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(want), "{cmd} {args:?}");
    }

    let output = Command::new(env!("CARGO_BIN_EXE_lattice"))
        .args(["matrix", scenario_path("matrix_demo.json").to_str().unwrap()])
        .env("LATTICE_TEST_FAULT", "corrupt-digest")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_INVARIANCE_VIOLATION));
}
