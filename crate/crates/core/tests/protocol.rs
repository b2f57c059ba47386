mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::fuzz::{fuzz_run, refuses};
use common::load;
use multiconcern::consensus::ProtocolEventKind;
use multiconcern::system::run_scenario;
use multiconcern::trace::MgmtRecord;
use multiconcern::ManagedSystem;

#[test]
fn aborts_leave_the_graph_untouched_and_commits_serialize() {
    let mut aborts = 0;
    let mut commits = 0;
    for seed in 0..100 {
        let out = fuzz_run(seed);
        assert!(out.violations.is_empty(), "seed {seed}: {:?}", out.violations);
        aborts += out.aborts;
        commits += out.commits;
    }
    assert!(aborts > 50 && commits > 100, "aborts {aborts}, commits {commits}");
}

#[test]
fn stub_refusals_show_up_as_nacks() {
    let out = fuzz_run(5);
    let responses: Vec<&MgmtRecord> =
        out.report.mgmt().filter(|m| m.ev == ProtocolEventKind::Response && m.by == "AM_S").collect();
    assert!(!responses.is_empty());
    for r in responses {
        let nack = r.detail["verdict"] == "nack";
        assert_eq!(nack, refuses(5, r.decision.0), "{}", r.decision);
    }
}

#[test]
fn every_manager_tracks_the_shared_version() {
    let s = load("convergence_wide");
    let mut sys = ManagedSystem::new(&s).unwrap();
    let mut seen = BTreeSet::new();
    while sys.now() < s.sim.run_length {
        sys.advance(sys.now() + s.sim.tick).unwrap();
        let shared = sys.shared_graph();
        seen.insert(shared.version());
        for m in sys.managers() {
            assert_eq!(m.graph().version(), shared.version(), "{} at {}", m.concern(), sys.now());
            assert!(m.graph().content_eq(shared));
        }
    }
    assert!(seen.len() > 2, "no reconfiguration happened");
}

/// Trace-wide properties that hold for every shipped scenario.
#[test]
fn trace_wide_properties() {
    for name in ["convergence", "convergence_wide", "nack_fairness", "hysteresis"] {
        let s = load(name);
        let report = run_scenario(&s).unwrap();
        let mgmt: Vec<&MgmtRecord> = report.mgmt().collect();
        let first = s.contracts[0].concern().to_string();

        // the security manager only answers
        assert!(!mgmt.iter().any(|m| m.ev == ProtocolEventKind::Propose && m.by == "AM_S"), "{name}");

        // only the first concern touches the graph at time 0
        for m in mgmt.iter().filter(|m| m.t == 0.0 && m.ev == ProtocolEventKind::Commit) {
            assert_eq!(m.by, first, "{name}");
        }

        // requested properties are always advertised by the proposer
        let mut registry: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
        for m in &mgmt {
            if m.ev == ProtocolEventKind::Propose {
                let subs = m.detail["substitutes"].as_object().cloned().unwrap_or_default();
                registry.insert(m.decision.0, subs.keys().cloned().collect());
            }
            if m.ev == ProtocolEventKind::Response {
                if let Some(p) = m.detail["verdict"].get("needProperty") {
                    assert!(registry[&m.decision.0].contains(p.as_str().unwrap()), "{name} {}", m.decision);
                }
            }
        }

        // decision ids never go backwards and commit versions are consecutive
        let ids: Vec<u64> = mgmt.iter().map(|m| m.decision.0).collect();
        assert!(ids.windows(2).all(|w| w[0] <= w[1]), "{name}");
        let versions: Vec<u64> = mgmt
            .iter()
            .filter(|m| m.ev == ProtocolEventKind::Commit)
            .map(|m| m.detail["version"].as_u64().unwrap())
            .collect();
        assert_eq!(versions, (1..=versions.len() as u64).collect::<Vec<_>>(), "{name}");

        // trace is time-ordered
        assert!(report.records.windows(2).all(|w| w[0].t() <= w[1].t()), "{name}");
    }
}

#[test]
fn placements_never_share_a_resource() {
    for name in ["convergence_wide", "nack_fairness", "hysteresis"] {
        let report = run_scenario(&load(name)).unwrap();
        for e in &report.audit {
            let g: serde_json::Value = serde_json::from_str(&e.after).unwrap();
            let mut seen = BTreeSet::new();
            for n in g["nodes"].as_array().unwrap() {
                let loc = n["meta"]["location"].as_str().unwrap().to_string();
                assert!(seen.insert(loc), "{name} {}", e.decision);
            }
        }
    }
}
