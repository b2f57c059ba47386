//! Seeded runs in which the security manager refuses a pseudo-random subset
//! of decisions.

use multiconcern::consensus::Verdict;
use multiconcern::managers::{build_security_rules, Knobs};
use multiconcern::rules::facts::names::DECISION_ID;
use multiconcern::rules::{Action, Plan, Precondition, Rule, RuleBase};
use multiconcern::system::RunReport;
use multiconcern::{Concern, ManagedSystem};

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn refuses(seed: u64, decision: u64) -> bool {
    mix(seed ^ mix(decision)) % 3 == 0
}

pub fn stub_rules(seed: u64) -> RuleBase {
    let mut rules = build_security_rules(&Knobs::default());
    rules.push(Rule::plain(
        "Stub_nack",
        9,
        Precondition::new("hash(seed, decisionId) % 3 = 0", move |f| {
            Some(refuses(seed, f.number(DECISION_ID)? as u64))
        }),
        Plan::new(vec![Action::Answer(Verdict::Nack)]),
    ));
    RuleBase::new(rules).unwrap()
}

pub struct FuzzOutcome {
    pub report: RunReport,
    pub violations: Vec<String>,
    pub aborts: usize,
    pub commits: usize,
}

pub fn fuzz_run(seed: u64) -> FuzzOutcome {
    let mut s = super::load("convergence_wide");
    s.sim.seed = seed;
    s.sim.jitter = true;
    s.sim.run_length = 150.0;
    let mut sys = ManagedSystem::new(&s).unwrap();
    sys.manager_mut(Concern::Security).unwrap().set_rules(stub_rules(seed));
    let report = sys.run().unwrap();

    let mut violations = Vec::new();
    let mut expected_base = 0;
    let (mut aborts, mut commits) = (0, 0);
    for e in &report.audit {
        if e.committed {
            commits += 1;
            if e.base_version != Some(expected_base) {
                violations.push(format!("{}: base_version {:?}, expected {expected_base}", e.decision, e.base_version));
            }
            expected_base += 1;
        } else {
            aborts += 1;
            if e.before != e.after {
                violations.push(format!("{}: aborted but the shared graph changed", e.decision));
            }
        }
    }
    FuzzOutcome { report, violations, aborts, commits }
}
