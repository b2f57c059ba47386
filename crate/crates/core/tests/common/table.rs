//! Outcome table for `resolve` over small response multisets.

use std::collections::BTreeMap;

use multiconcern::consensus::{AbortReason, ConsensusOutcome, ConsensusResponse, Decision, DecisionId, Verdict};
use multiconcern::graph::{GraphDelta, PowerClass};
use multiconcern::rules::{Action, RecruitPolicy};
use multiconcern::Concern;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum R {
    Ack,
    Nack,
    Sec,
    Pow,
}

pub const ALL: [R; 4] = [R::Ack, R::Nack, R::Sec, R::Pow];

fn find() -> Action {
    Action::find_new_resource()
}

fn find_green() -> Action {
    Action::FindNewResource { policy: RecruitPolicy::OnlyClass(PowerClass::Green) }
}

fn base() -> Vec<Action> {
    vec![find(), Action::AllocateNewWorker, Action::ConnectWorker]
}

#[derive(Clone, Copy, Debug)]
pub enum Fixture {
    /// The two substitutes touch different actions.
    Consistent,
    /// Both replace the connect step, differently.
    Conflicting,
    /// Both ask for the very same replacement plan.
    Identical,
}

fn substitutes(f: Fixture) -> BTreeMap<String, Vec<Action>> {
    let ssl = vec![find(), Action::AllocateNewWorker, Action::ConnectSslWorker];
    let power = match f {
        Fixture::Consistent => vec![find_green(), Action::AllocateNewWorker, Action::ConnectWorker],
        Fixture::Conflicting => vec![find(), Action::AllocateNewWorker, Action::RemoveWorker],
        Fixture::Identical => ssl.clone(),
    };
    BTreeMap::from([("security".to_string(), ssl), ("power".to_string(), power)])
}

/// The expected outcome, written out case by case.
pub fn oracle(f: Fixture, rs: &[R]) -> ConsensusOutcome {
    let commit = |final_plan| ConsensusOutcome::Commit { final_plan };
    if rs.contains(&R::Nack) {
        return ConsensusOutcome::Abort { reason: AbortReason::AnyNack };
    }
    let sec = rs.contains(&R::Sec);
    let pow = rs.contains(&R::Pow);
    let ssl_plan = vec![find(), Action::AllocateNewWorker, Action::ConnectSslWorker];
    match (sec, pow, f) {
        (false, false, _) => commit(base()),
        (true, false, _) => commit(ssl_plan),
        (false, true, Fixture::Consistent) => commit(vec![find_green(), Action::AllocateNewWorker, Action::ConnectWorker]),
        (false, true, Fixture::Conflicting) => commit(vec![find(), Action::AllocateNewWorker, Action::RemoveWorker]),
        (false, true, Fixture::Identical) => commit(ssl_plan),
        (true, true, Fixture::Consistent) => {
            commit(vec![find_green(), Action::AllocateNewWorker, Action::ConnectSslWorker])
        }
        (true, true, Fixture::Conflicting) => ConsensusOutcome::Abort { reason: AbortReason::InconsistentSubstitutes },
        (true, true, Fixture::Identical) => commit(ssl_plan),
    }
}

pub fn decision(f: Fixture) -> Decision {
    Decision {
        id: DecisionId(1),
        proposer: Concern::Performance,
        rule: "Farm_inc^PH1".into(),
        tag: "Farm_inc".into(),
        proposed_delta: GraphDelta::empty(0),
        recruited_resource: None,
        base_plan: base(),
        substitutes: substitutes(f),
    }
}

pub fn responses(rs: &[R]) -> Vec<ConsensusResponse> {
    let who = [Concern::Security, Concern::Power, Concern::Performance];
    rs.iter()
        .zip(who)
        .map(|(r, c)| {
            let v = match r {
                R::Ack => Verdict::Ack,
                R::Nack => Verdict::Nack,
                R::Sec => Verdict::NeedProperty("security".into()),
                R::Pow => Verdict::NeedProperty("power".into()),
            };
            ConsensusResponse::new(c, v)
        })
        .collect()
}

/// Multisets as non-decreasing sequences.
pub fn multisets(max: usize) -> Vec<Vec<R>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for m in &frontier {
            for r in ALL {
                if m.last().is_none_or(|l: &R| *l <= r) {
                    let mut n = m.clone();
                    n.push(r);
                    next.push(n);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub const FIXTURES: [Fixture; 3] = [Fixture::Consistent, Fixture::Conflicting, Fixture::Identical];
