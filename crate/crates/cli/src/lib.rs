//! Command implementations behind the `lattice` binary.
//!
//! The binary is a thin shell: everything it can do is equally reachable
//! through these functions, and both paths produce byte-identical output
//! files. Exit codes are exhaustive: 0 success, 1 I/O failure, 2 invalid
//! scenario, 3 non-convergence, 4 invariance violation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lattice_core::hash::fnv1a64;
use lattice_core::replication::{NodeId, SyncPolicy, TopologyKind};
use lattice_sim::{Metrics, RunOptions, Scenario, TraceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID_SCENARIO: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_INVARIANCE_VIOLATION: i32 = 4;

/// Serialized run result: metrics plus provenance (scenario hash, tool
/// version). Written as canonical JSON — sorted keys, no insignificant
/// whitespace, one trailing newline — so identical runs produce identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub tool_version: String,
    pub scenario_hash: String,
    pub metrics: Metrics,
}

#[derive(Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

/// Canonical JSON bytes of any serializable value: object keys sorted
/// (serde_json maps are B-tree backed), compact separators.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable");
    let mut bytes = serde_json::to_string(&v).expect("serializable").into_bytes();
    bytes.push(b'\n');
    bytes
}

/// FNV-1a 64 of the canonical scenario serialization, hex-encoded.
pub fn scenario_hash(scenario: &Scenario) -> String {
    format!("{:016x}", fnv1a64(&canonical_json(scenario)))
}

fn load_scenario(path: &Path, out: &mut dyn Write) -> Result<Scenario, i32> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            let _ = writeln!(out, "error: cannot read {}: {e}", path.display());
            return Err(EXIT_IO);
        }
    };
    match serde_json::from_str::<Scenario>(&text) {
        Ok(scenario) => Ok(scenario),
        Err(e) => {
            let _ = writeln!(out, "file.parse: {e}");
            Err(EXIT_INVALID_SCENARIO)
        }
    }
}

fn validated(path: &Path, out: &mut dyn Write) -> Result<Scenario, i32> {
    let scenario = load_scenario(path, out)?;
    let diagnostics = scenario.validate();
    if diagnostics.is_empty() {
        Ok(scenario)
    } else {
        for d in &diagnostics {
            let _ = writeln!(out, "{d}");
        }
        Err(EXIT_INVALID_SCENARIO)
    }
}

/// `validate <file>`: "OK" and exit 0, or one diagnostic line per
/// violation and exit 2.
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> i32 {
    match validated(path, out) {
        Ok(_) => {
            let _ = writeln!(out, "OK");
            EXIT_OK
        }
        Err(code) => code,
    }
}

/// `run <file>`: execute the scenario, write the metrics file, print one
/// summary line. Exit 3 when the run does not converge within its
/// duration.
pub fn cmd_run(path: &Path, overrides: &RunOverrides, out: &mut dyn Write) -> i32 {
    let mut scenario = match validated(path, out) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    log::info!("running {} (seed {})", path.display(), scenario.seed);

    let mut log_buffer = overrides.event_log.as_ref().map(|_| Vec::<u8>::new());
    let result = lattice_sim::run_with_options(
        &scenario,
        RunOptions {
            event_log: log_buffer.as_mut().map(|b| b as &mut dyn Write),
        },
    );
    let output = match result {
        Ok(output) => output,
        Err(lattice_sim::SimError::InvalidScenario(diagnostics)) => {
            for d in diagnostics {
                let _ = writeln!(out, "{d}");
            }
            return EXIT_INVALID_SCENARIO;
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_IO;
        }
    };
    let metrics = output.metrics;

    if let (Some(log_path), Some(buffer)) = (&overrides.event_log, log_buffer) {
        if let Err(e) = fs::write(log_path, buffer) {
            let _ = writeln!(out, "error: cannot write {}: {e}", log_path.display());
            return EXIT_IO;
        }
    }

    let out_path = overrides
        .out
        .clone()
        .unwrap_or_else(|| path.with_extension("metrics.json"));
    let file = MetricsFile {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_hash: scenario_hash(&scenario),
        metrics: metrics.clone(),
    };
    if let Err(e) = fs::write(&out_path, canonical_json(&file)) {
        let _ = writeln!(out, "error: cannot write {}: {e}", out_path.display());
        return EXIT_IO;
    }
    log::debug!("metrics written to {}", out_path.display());

    let tick = metrics
        .convergence_tick
        .map_or_else(|| "-".to_string(), |t| t.to_string());
    let _ = writeln!(
        out,
        "converged={} convergence_tick={} envelopes_sent={} envelopes_dropped={}",
        metrics.converged, tick, metrics.envelopes_sent, metrics.envelopes_dropped
    );
    if metrics.converged {
        EXIT_OK
    } else {
        EXIT_NO_CONVERGENCE
    }
}

pub const MATRIX_POLICIES: [(&str, SyncPolicy); 3] = [
    ("immediate", SyncPolicy::Immediate),
    ("every_n_3", SyncPolicy::EveryN { n: 3 }),
    ("interval_5", SyncPolicy::Interval { ticks: 5 }),
];

/// `matrix <file>`: run the scenario's trace under every policy x
/// topology combination and demand identical converged digests. The whole
/// point: synchronization and topology choices must not alter program
/// behavior.
pub fn cmd_matrix(
    path: &Path,
    out_dir: Option<&Path>,
    corrupt_digest_for_test: bool,
    out: &mut dyn Write,
) -> i32 {
    let scenario = match validated(path, out) {
        Ok(s) => s,
        Err(code) => return code,
    };

    // Pin the trace: one materialization shared by all nine runs.
    let mut base = scenario.clone();
    base.trace = TraceSpec {
        ops: Some(scenario.resolve_trace()),
        generator: None,
    };
    // The matrix owns topology selection end to end.
    base.topology_swaps.clear();

    let p2p_fanout = if base.nodes >= 3 { 2 } else { 1 };
    let topologies: [(&str, TopologyKind); 3] = [
        (
            "client_server",
            TopologyKind::ClientServer { server: NodeId(0) },
        ),
        ("full_mesh", TopologyKind::FullMesh),
        (
            "peer_to_peer",
            TopologyKind::PeerToPeer {
                fanout: p2p_fanout,
                seed: base.seed,
            },
        ),
    ];

    let mut ticks: Vec<Vec<String>> = Vec::new();
    let mut digests: Vec<(String, BTreeMap<String, String>)> = Vec::new();
    for (policy_name, policy) in MATRIX_POLICIES {
        let mut row = Vec::new();
        for (topology_name, topology) in topologies {
            let mut cell = base.clone();
            cell.sync_policy = policy;
            cell.topology = topology;
            let metrics = match lattice_sim::run(&cell) {
                Ok(m) => m,
                Err(lattice_sim::SimError::InvalidScenario(diagnostics)) => {
                    for d in diagnostics {
                        let _ = writeln!(out, "{d}");
                    }
                    return EXIT_INVALID_SCENARIO;
                }
                Err(e) => {
                    let _ = writeln!(out, "error: {e}");
                    return EXIT_IO;
                }
            };
            let cell_name = format!("{policy_name}_{topology_name}");
            if let Some(dir) = out_dir {
                if let Err(e) = fs::create_dir_all(dir) {
                    let _ = writeln!(out, "error: cannot create {}: {e}", dir.display());
                    return EXIT_IO;
                }
                let file = MetricsFile {
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                    scenario_hash: scenario_hash(&cell),
                    metrics: metrics.clone(),
                };
                let cell_path = dir.join(format!("{cell_name}.metrics.json"));
                if let Err(e) = fs::write(&cell_path, canonical_json(&file)) {
                    let _ = writeln!(out, "error: cannot write {}: {e}", cell_path.display());
                    return EXIT_IO;
                }
            }
            if !metrics.converged {
                let _ = writeln!(out, "{cell_name}: did not converge within the duration");
                return EXIT_NO_CONVERGENCE;
            }
            row.push(
                metrics
                    .convergence_tick
                    .map_or_else(|| "-".to_string(), |t| t.to_string()),
            );
            let fingerprint = metrics.digest_fingerprint().cloned().unwrap_or_default();
            digests.push((cell_name, fingerprint));
        }
        ticks.push(row);
    }

    if corrupt_digest_for_test {
        // Negative-control hook: deliberately damage one cell's digest to
        // prove a real invariance violation trips exit 4.
        if let Some((_, fingerprint)) = digests.last_mut() {
            if let Some(digest) = fingerprint.values_mut().next() {
                *digest = format!("{:016x}", !u64::from_str_radix(digest, 16).unwrap_or(0));
            }
        }
    }

    let _ = writeln!(
        out,
        "{:<12} {:>14} {:>14} {:>14}",
        "", "client_server", "full_mesh", "peer_to_peer"
    );
    for ((policy_name, _), row) in MATRIX_POLICIES.iter().zip(&ticks) {
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>14} {:>14}",
            policy_name, row[0], row[1], row[2]
        );
    }

    let (reference_name, reference) = &digests[0];
    for (name, fingerprint) in &digests[1..] {
        if fingerprint != reference {
            let _ = writeln!(
                out,
                "invariance violation: digests of {name} differ from {reference_name}"
            );
            return EXIT_INVARIANCE_VIOLATION;
        }
    }
    let _ = writeln!(out, "all {} runs converged to identical digests", digests.len());
    EXIT_OK
}
