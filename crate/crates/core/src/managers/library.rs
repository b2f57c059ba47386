//! Built-in rule sets.

use std::collections::BTreeSet;

use crate::consensus::Verdict;
use crate::graph::{ChannelKind, GraphDelta, PowerClass};
use crate::rules::facts::names::*;
use crate::rules::{Action, ConsensusTrigger, FactStore, Plan, Precondition, RecruitPolicy, Rule};

use super::Knobs;

pub const FARM_INC: &str = "Farm_inc";
pub const FARM_INC_GREEN: &str = "Farm_inc_green";
pub const FARM_DEC: &str = "Farm_dec";

pub const SECURITY: &str = "security";

fn ph1(tag: &str) -> String {
    format!("{tag}^PH1")
}

/// One farm-growth family: the phase-one rule and its three phase-two rules.
fn growth_family(tag: &str, policy: RecruitPolicy, knobs: &Knobs) -> Vec<Rule> {
    let p1 = ph1(tag);
    let demand = Precondition::new("instanceof_farm & 1/T_arr > QoS_rate & Throughput < QoS_rate", |f| {
        let rate = f.number(QOS_RATE)?;
        Some(f.flag(INSTANCEOF_FARM)? && 1.0 / f.number(T_ARR)? > rate && f.number(THROUGHPUT)? < rate)
    });
    let ph2 = |suffix: &str| format!("{tag}^PH2_{suffix}");
    vec![
        Rule::phase_one(
            &p1,
            tag,
            knobs.priority(&p1),
            demand,
            Plan::new(vec![Action::FindNewResource { policy }, Action::AskConsensus]),
        ),
        Rule::phase_two(
            ph2("ack"),
            tag,
            knobs.priority(&ph2("ack")),
            ConsensusTrigger::Ack,
            Plan::new(vec![Action::AllocateNewWorker, Action::ConnectWorker]),
        ),
        Rule::phase_two(
            ph2(SECURITY),
            tag,
            knobs.priority(&ph2(SECURITY)),
            ConsensusTrigger::NeedProperty(SECURITY.into()),
            Plan::new(vec![Action::AllocateNewWorker, Action::ConnectSslWorker]),
        ),
        Rule::phase_two(
            ph2("nack"),
            tag,
            knobs.priority(&ph2("nack")),
            ConsensusTrigger::Nack,
            Plan::new(vec![Action::LowerPriority(p1.clone())]),
        ),
    ]
}

/// The performance manager's rules for a minimum-throughput contract.
pub fn build_performance_rules(_rate: f64, knobs: &Knobs) -> Vec<Rule> {
    let primary = if knobs.green_alternative { RecruitPolicy::PowerAgnostic } else { RecruitPolicy::Default };
    let mut rules = growth_family(FARM_INC, primary, knobs);
    if knobs.green_alternative {
        rules.extend(growth_family(FARM_INC_GREEN, RecruitPolicy::OnlyClass(PowerClass::Green), knobs));
    }
    let h = knobs.hysteresis_factor;
    rules.push(Rule::plain(
        FARM_DEC,
        knobs.priority(FARM_DEC),
        Precondition::new(format!("instanceof_farm & Throughput >= {h} * QoS_rate"), move |f| {
            Some(f.flag(INSTANCEOF_FARM)? && f.number(THROUGHPUT)? >= h * f.number(QOS_RATE)?)
        }),
        Plan::new(vec![Action::RemoveWorker]),
    ));
    rules
}

/// Added nodes of a proposal that would talk to the rest of the graph over
/// an unsecured channel while not being secure themselves.
pub(crate) fn exposed_nodes(delta: &GraphDelta, trusted: &BTreeSet<String>) -> usize {
    delta
        .added_nodes
        .iter()
        .filter(|n| {
            let secure = n
                .meta
                .secure()
                .unwrap_or_else(|| n.meta.location().is_some_and(|r| trusted.contains(r.as_str())));
            !secure
        })
        .filter(|n| {
            delta
                .added_arcs
                .iter()
                .filter(|a| a.from == n.id || a.to == n.id)
                .any(|a| a.meta.channel_kind() != Some(ChannelKind::Ssl))
        })
        .count()
}

fn asked(f: &FactStore) -> Option<&GraphDelta> {
    f.delta(CONSENSUS_ASKED)
}

fn answer(v: Verdict) -> Plan {
    Plan::new(vec![Action::Answer(v)])
}

/// The security manager only answers proposals.
pub fn build_security_rules(knobs: &Knobs) -> Vec<Rule> {
    let exposed = |f: &FactStore| -> Option<usize> { Some(exposed_nodes(asked(f)?, f.text_set(TRUSTED_RESOURCES)?)) };
    let registry_has = |f: &FactStore| -> Option<bool> { Some(f.text_set(PROPOSER_REGISTRY)?.contains(SECURITY)) };
    let rule = |name: &str, pre: Precondition, v: Verdict| Rule::plain(name, knobs.priority(name), pre, answer(v));
    vec![
        rule(
            "Node_new^nonSecure",
            Precondition::new("consensusAsked(G') & nonSecure(N) & registry(security)", move |f| {
                Some(exposed(f)? > 0 && registry_has(f)?)
            }),
            Verdict::NeedProperty(SECURITY.into()),
        ),
        rule(
            "Node_new^nonSecure_nack",
            Precondition::new("consensusAsked(G') & nonSecure(N) & !registry(security)", move |f| {
                Some(exposed(f)? > 0 && !registry_has(f)?)
            }),
            Verdict::Nack,
        ),
        rule(
            "Node_new^secure",
            Precondition::new("consensusAsked(G') & secure(N)", move |f| {
                Some(!asked(f)?.added_nodes.is_empty() && exposed(f)? == 0)
            }),
            Verdict::Ack,
        ),
        rule(
            "Node_new^none",
            Precondition::new("consensusAsked(G') & N = {}", |f| Some(asked(f)?.added_nodes.is_empty())),
            Verdict::Ack,
        ),
    ]
}

/// The power manager only answers proposals.
pub fn build_power_rules(_budget: f64, knobs: &Knobs) -> Vec<Rule> {
    let rule = |name: &str, pre: Precondition, v: Verdict| Rule::plain(name, knobs.priority(name), pre, answer(v));
    vec![
        rule(
            "Power_within_budget",
            Precondition::new("consensusAsked(G') & (N = {} | power(G') <= budget)", |f| {
                let grows = !asked(f)?.added_nodes.is_empty();
                Some(!grows || f.number(POWER_AFTER)? <= f.number(POWER_BUDGET)?)
            }),
            Verdict::Ack,
        ),
        rule(
            "Power_over_budget",
            Precondition::new("consensusAsked(G') & N != {} & power(G') > budget", |f| {
                let grows = !asked(f)?.added_nodes.is_empty();
                Some(grows && f.number(POWER_AFTER)? > f.number(POWER_BUDGET)?)
            }),
            Verdict::Nack,
        ),
    ]
}
