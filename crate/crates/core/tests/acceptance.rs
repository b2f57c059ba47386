//! Acceptance suite: one line per criterion.
//!
//! Run with `cargo test -p multiconcern --test acceptance`. A criterion listed
//! in `EXPECTED_FAILURES` is still evaluated in full; it is reported as XFAIL
//! and does not fail the suite, while an unexpected pass does.

mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use common::fuzz::fuzz_run;
use common::table::{decision, multisets, oracle, responses, FIXTURES};
use common::{farm, load, phase, placed_world, scenario_path};
use multiconcern::consensus::ProtocolEventKind;
use multiconcern::graph::{ChannelKind, GraphDelta, PowerClass, ResourceId};
use multiconcern::sim::{Domain, ResourcePool, SimConfig};
use multiconcern::system::{run_scenario, RunReport};
use multiconcern::trace::MgmtRecord;
use multiconcern::{resolve, Scenario};

/// Criteria that cannot hold as stated; see the README.
const EXPECTED_FAILURES: &[u8] = &[1];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(checks: &[(&str, bool)], extra: String) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        extra
    } else {
        format!("failed: {}; {extra}", failed.join(", "))
    };
    Outcome { pass: failed.is_empty(), detail }
}

fn mgmt(report: &RunReport) -> Vec<&MgmtRecord> {
    report.mgmt().collect()
}

fn delta_of(m: &MgmtRecord) -> GraphDelta {
    serde_json::from_value(m.detail["delta"].clone()).expect("commit delta")
}

fn plan_of(m: &MgmtRecord) -> Vec<String> {
    m.detail["plan"]
        .as_array()
        .map(|a| a.iter().map(|x| x.to_string()).collect())
        .unwrap_or_default()
}

fn untrusted(pool: &ResourcePool, r: Option<&ResourceId>) -> bool {
    r.and_then(|r| pool.get(r)).is_some_and(|r| r.domain == Domain::Untrusted)
}

/// Additions by the performance manager: each must sit on a resource and, if
/// that resource is untrusted, be connected over Ssl after a security request.
fn additions_secured(report: &RunReport, pool: &ResourcePool) -> (usize, usize, bool) {
    let recs = mgmt(report);
    let (mut added, mut on_untrusted, mut ok) = (0, 0, true);
    for c in recs.iter().filter(|m| m.ev == ProtocolEventKind::Commit && m.by == "AM_P") {
        let d = delta_of(c);
        for n in &d.added_nodes {
            added += 1;
            if !untrusted(pool, n.meta.location()) {
                continue;
            }
            on_untrusted += 1;
            let arcs_ssl = d
                .added_arcs
                .iter()
                .filter(|a| a.from == n.id || a.to == n.id)
                .all(|a| a.meta.channel_kind() == Some(ChannelKind::Ssl));
            let asked = recs.iter().any(|m| {
                m.decision == c.decision
                    && m.ev == ProtocolEventKind::Response
                    && m.detail["verdict"]["needProperty"] == "security"
            });
            ok &= arcs_ssl && asked;
        }
    }
    (added, on_untrusted, ok)
}

fn criterion_1() -> Outcome {
    let s = load("convergence");
    let pool = s.resources().unwrap();
    let started = Instant::now();
    let report = run_scenario(&s).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let init = delta_of(mgmt(&report).into_iter().find(|m| m.decision.0 == 0).unwrap());
    let init_by_security = mgmt(&report)[0].by == "AM_S";
    let init_trusted = init.added_nodes.iter().filter(|n| !untrusted(&pool, n.meta.location())).count();
    let init_plain = init.added_arcs.iter().filter(|a| a.meta.channel_kind() == Some(ChannelKind::Plain)).count();
    let init_ok = init_by_security
        && init.added_nodes.len() == 8
        && init_trusted == 8
        && init_plain == init.added_arcs.len();
    let proposals = mgmt(&report).iter().filter(|m| m.ev == ProtocolEventKind::Propose && m.by == "AM_P").count();
    let (added, on_untrusted, secured) = additions_secured(&report, &pool);
    let v = &report.verdict;
    let secure_final = v.contracts_satisfied.get("secureData") == Some(&true);

    let wide = run_scenario(&load("convergence_wide")).unwrap();
    let wide_pool = load("convergence_wide").resources().unwrap();
    let (w_added, w_untrusted, w_secured) = additions_secured(&wide, &wide_pool);

    outcome(
        &[
            ("initial 8 nodes on trusted resources with Plain arcs", init_ok),
            ("AM_P proposes worker additions", proposals > 0),
            ("added untrusted workers use Ssl via needProperty", secured),
            ("converged", v.converged),
            ("final throughput >= 1.0", v.final_throughput >= 1.0),
            ("arcs at untrusted nodes are Ssl", secure_final),
            ("runtime < 5 s", elapsed < 5.0),
        ],
        format!(
            "initial trusted {init_trusted}/8, plain arcs {init_plain}/{}, proposals {proposals}, added {added} \
             ({on_untrusted} untrusted), final throughput {:.3}, {elapsed:.2}s; 8+8 pool variant: converged={} at tick {:?}, \
             added {w_added} ({w_untrusted} untrusted, secured={w_secured})",
            init.added_arcs.len(),
            v.final_throughput,
            wide.verdict.converged,
            wide.verdict.ticks_to_converge,
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for f in FIXTURES {
        let d = decision(f);
        for m in multisets(3) {
            cases += 1;
            let got = resolve(&d, &responses(&m));
            if got != oracle(f, &m) {
                mismatches.push(format!("{f:?} {m:?}"));
            }
        }
    }
    outcome(
        &[("all cases match", mismatches.is_empty()), ("105 cases", cases == 105)],
        format!("{cases} cases over 35 multisets x 3 substitute fixtures, {} mismatches", mismatches.len()),
    )
}

fn criterion_3() -> Outcome {
    let s = load("nack_fairness");
    let pool = s.resources().unwrap();
    let report = run_scenario(&s).unwrap();
    let recs = mgmt(&report);
    let class_of = |m: &MgmtRecord| {
        m.detail["recruited"].as_str().and_then(|r| pool.get(&ResourceId::new(r))).map(|r| r.power_class)
    };
    let by_ev = |d: u64, ev: ProtocolEventKind| recs.iter().find(|m| m.decision.0 == d && m.ev == ev);

    let first = recs.iter().find(|m| m.ev == ProtocolEventKind::Propose && m.by == "AM_P");
    let mut checks = Vec::new();
    let mut detail = String::new();
    if let Some(p) = first {
        let d = p.decision.0;
        let nacked = by_ev(d, ProtocolEventKind::Response).is_some_and(|r| r.by == "AM_W" && r.detail["verdict"] == "nack");
        let lowered = by_ev(d, ProtocolEventKind::LowerPriority)
            .is_some_and(|l| l.detail["rule"] == "Farm_inc^PH1" && l.detail["priority"] == 4);
        let next = recs.iter().find(|m| m.ev == ProtocolEventKind::Propose && m.decision.0 > d);
        let green_commit = next.is_some_and(|n| {
            n.t > p.t
                && n.detail["rule"] == "Farm_inc_green^PH1"
                && class_of(n) == Some(PowerClass::Green)
                && by_ev(n.decision.0, ProtocolEventKind::Commit).is_some()
        });
        let after = next.and_then(|n| recs.iter().find(|m| m.ev == ProtocolEventKind::Propose && m.decision.0 > n.decision.0));
        let reset = after.is_some_and(|a| a.detail["rule"] == "Farm_inc^PH1");
        checks.push(("first proposal recruits Red and AM_W answers NACK", nacked && class_of(p) == Some(PowerClass::Red)));
        checks.push(("lowerPriority(Farm_inc^PH1) to 4", lowered));
        checks.push(("next cycle commits the green alternative", green_commit));
        checks.push(("priorities reset after the commit", reset));
        detail = format!(
            "D{d} at t={} recruits {}, next D{} at t={} via {}",
            p.t,
            p.detail["recruited"],
            next.map_or(0, |n| n.decision.0),
            next.map_or(0.0, |n| n.t),
            next.map_or(String::new(), |n| n.detail["rule"].to_string())
        );
    } else {
        checks.push(("AM_P proposes", false));
    }
    checks.push(("converged", report.verdict.converged));
    checks.push(("power budget held", report.verdict.contracts_satisfied.get("powerBudget") == Some(&true)));
    outcome(&checks, detail)
}

fn non_relay(report: &RunReport) -> Vec<String> {
    report
        .records
        .iter()
        .filter(|r| r.mgmt().is_none_or(|m| m.ev != ProtocolEventKind::Relay))
        .map(|r| r.to_line())
        .collect()
}

fn committed_log(report: &RunReport) -> Vec<(u64, Vec<String>, GraphDelta)> {
    report
        .mgmt()
        .filter(|m| m.ev == ProtocolEventKind::Commit)
        .map(|m| (m.decision.0, plan_of(m), delta_of(m)))
        .collect()
}

fn criterion_4() -> Outcome {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for name in ["convergence", "convergence_wide"] {
        let mut s: Scenario = load(name);
        s.mode = multiconcern::CoordinationMode::Sm;
        let sm = run_scenario(&s).unwrap();
        s.mode = multiconcern::CoordinationMode::Cm;
        let cm = run_scenario(&s).unwrap();
        let relays = |r: &RunReport| r.mgmt().filter(|m| m.ev == ProtocolEventKind::Relay).count();
        let same_log = committed_log(&sm) == committed_log(&cm);
        let same_rest = non_relay(&sm) == non_relay(&cm);
        let relay_shape = relays(&cm) == 0 && (relays(&sm) > 0) == (committed_log(&sm).len() > 1);
        checks.push((name, same_log && same_rest && relay_shape));
        notes.push(format!(
            "{name}: {} commits, relays sm={} cm={}",
            committed_log(&sm).len(),
            relays(&sm),
            relays(&cm)
        ));
    }
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() { notes.join("; ") } else { format!("differs: {}", failed.join(", ")) },
    }
}

fn criterion_5() -> Outcome {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for k in [1u32, 2, 4] {
        let mut w = placed_world(&farm(4.0, k), vec![phase(1000.0, 5.0)], SimConfig::default());
        w.step(1000.0).unwrap();
        let c = w.graph().managed_farm().unwrap().collector;
        let n = w.completions(&c).iter().filter(|t| **t > 100.0).count();
        let measured = n as f64 / 900.0;
        let expected = k as f64 / 4.0;
        checks.push((n >= 200 && (measured - expected).abs() <= 0.05 * expected, k));
        notes.push(format!("k={k}: {measured:.4} vs {expected} over {n} tasks"));
    }
    let mut w = placed_world(&farm(4.0, 4), vec![phase(1000.0, 0.5)], SimConfig::default());
    w.step(1000.0).unwrap();
    let c = w.graph().managed_farm().unwrap().collector;
    let n = w.completions(&c).iter().filter(|t| **t > 100.0).count();
    let measured = n as f64 / 900.0;
    let unsat = n >= 200 && (measured - 0.5).abs() <= 0.025;
    notes.push(format!("unsaturated: {measured:.4} vs 0.5 over {n} tasks"));
    Outcome { pass: checks.iter().all(|(ok, _)| *ok) && unsat, detail: notes.join("; ") }
}

fn criterion_6() -> Outcome {
    let (mut aborts, mut commits, mut bad) = (0, 0, Vec::new());
    for seed in 0..100 {
        let out = fuzz_run(seed);
        aborts += out.aborts;
        commits += out.commits;
        bad.extend(out.violations.into_iter().map(|v| format!("seed {seed}: {v}")));
    }
    outcome(
        &[("no violations", bad.is_empty()), ("aborts exercised", aborts > 0)],
        format!("100 seeds, {commits} commits, {aborts} aborts, {} violations", bad.len()),
    )
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_multiconcern");
    let mut failed = Vec::new();
    let names = ["convergence", "convergence_wide", "nack_fairness", "hysteresis"];
    for name in names {
        let scenario = scenario_path(name);
        let out = dir.path().join(name);
        Command::new(exe).arg("run").arg(&scenario).arg("--out").arg(&out).output().unwrap();
        let status = Command::new(exe).arg("replay").arg(out.join("trace.jsonl")).arg(&scenario).output().unwrap().status;
        if status.code() != Some(0) {
            failed.push(name);
        }
    }
    outcome(&[("every replay exits 0", failed.is_empty())], format!("{} scenarios replayed, failing: {failed:?}", names.len()))
}

fn criterion_8() -> Outcome {
    let s = load("hysteresis");
    let rate = match s.contracts[0] {
        multiconcern::QoSContract::MinThroughput { rate } => rate,
        _ => unreachable!("hysteresis scenario has a throughput contract"),
    };
    let drop_at = s.workload[0].duration;
    let report = run_scenario(&s).unwrap();
    let degrees: Vec<usize> = report.metrics.iter().map(|m| m.degree).collect();
    let removal_times: Vec<f64> = report
        .mgmt()
        .filter(|m| m.ev == ProtocolEventKind::Commit && plan_of(m) == ["\"removeWorker\""])
        .map(|m| m.t)
        .collect();
    let window: Vec<&multiconcern::system::MetricsRow> = report.metrics.iter().filter(|m| m.time > drop_at).take(20).collect();
    let end = window.last().unwrap();

    let mut direction_changes = 0;
    let mut last_dir = 0i32;
    for w in degrees.windows(2) {
        let dir = (w[1] as i32 - w[0] as i32).signum();
        if dir != 0 {
            if last_dir != 0 && dir != last_dir {
                direction_changes += 1;
            }
            last_dir = dir;
        }
    }
    let removed_after_drop = removal_times.iter().filter(|t| **t > drop_at).count();
    let last_removal = removal_times.last().copied().unwrap_or(0.0);
    let distinct: BTreeSet<usize> = degrees.iter().copied().collect();
    outcome(
        &[
            ("workers removed after the drop", removed_after_drop > 0),
            ("removals stop once throughput < 1.5 x contract", end.throughput < 1.5 * rate && end.degree > 1 && last_removal < end.time),
            ("degree never below 1", degrees.iter().all(|d| *d >= 1)),
            ("at most one direction change", direction_changes <= 1),
        ],
        format!(
            "degrees seen {distinct:?}, {removed_after_drop} removals after t={drop_at}, last at t={last_removal}, \
             throughput {:.3} at t={} with degree {}, {direction_changes} direction change(s)",
            end.throughput, end.time, end.degree
        ),
    )
}

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "convergence scenario", criterion_1),
        (2, "consensus outcome table", criterion_2),
        (3, "NACK fairness", criterion_3),
        (4, "SM/CM equivalence", criterion_4),
        (5, "throughput oracle", criterion_5),
        (6, "abort purity and atomicity", criterion_6),
        (7, "determinism gate", criterion_7),
        (8, "Farm_dec hysteresis", criterion_8),
    ];
    let mut broken = 0;
    for (n, title, check) in criteria {
        let o = check();
        let expected_fail = EXPECTED_FAILURES.contains(&n);
        let tag = match (o.pass, expected_fail) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "XFAIL",
            (true, true) => "XPASS",
        };
        if o.pass == expected_fail {
            broken += 1;
        }
        println!("criterion {n} {tag:<5} {title}: {}", o.detail);
    }
    if broken > 0 {
        eprintln!("{broken} criterion result(s) differ from expectation");
        std::process::exit(1);
    }
}
