use std::collections::BTreeMap;

use super::{AbortReason, ConsensusOutcome, ConsensusResponse, Decision, Verdict};
use crate::rules::Action;

/// Turns the phase-one responses into the outcome of a decision.
///
/// Several distinct property requests are merged position by position: each
/// substitute of the same length as the base plan is read as a set of
/// replacements, and two substitutes that replace the same base action must
/// agree on the replacement. A substitute whose length differs from the base
/// plan replaces it wholesale and can only be merged with identical ones.
pub fn resolve(decision: &Decision, responses: &[ConsensusResponse]) -> ConsensusOutcome {
    let abort = |reason| ConsensusOutcome::Abort { reason };
    if responses.iter().any(|r| r.verdict == Verdict::Nack) {
        return abort(AbortReason::AnyNack);
    }

    // distinct properties in the order the requesting managers answered
    let mut props: Vec<&str> = Vec::new();
    for r in responses {
        if let Verdict::NeedProperty(p) = &r.verdict {
            if !props.contains(&p.as_str()) {
                props.push(p);
            }
        }
    }
    if props.is_empty() {
        return ConsensusOutcome::Commit { final_plan: decision.base_plan.clone() };
    }

    let mut subs = Vec::with_capacity(props.len());
    for p in &props {
        match decision.substitutes.get(*p) {
            Some(s) => subs.push(s),
            None => {
                log::warn!("{}: no substitute plan for requested property `{p}`", decision.id);
                return abort(AbortReason::AnyNack);
            }
        }
    }
    if subs.len() == 1 {
        return ConsensusOutcome::Commit { final_plan: subs[0].clone() };
    }

    let base = &decision.base_plan;
    if subs.iter().any(|s| s.len() != base.len()) {
        return if subs.windows(2).all(|w| w[0] == w[1]) {
            ConsensusOutcome::Commit { final_plan: subs[0].clone() }
        } else {
            abort(AbortReason::InconsistentSubstitutes)
        };
    }

    let mut replacements: BTreeMap<usize, &Action> = BTreeMap::new();
    for s in &subs {
        for (i, (b, a)) in base.iter().zip(s.iter()).enumerate() {
            if a == b {
                continue;
            }
            match replacements.get(&i) {
                Some(prev) if *prev != a => return abort(AbortReason::InconsistentSubstitutes),
                _ => {
                    replacements.insert(i, a);
                }
            }
        }
    }
    let final_plan = base
        .iter()
        .enumerate()
        .map(|(i, b)| replacements.get(&i).map_or_else(|| b.clone(), |a| (*a).clone()))
        .collect();
    ConsensusOutcome::Commit { final_plan }
}
