//! Priority-ordered precondition → action rules and the manager control cycle.
//!
//! A rule written for a manager working in isolation is split into a phase-one
//! rule (same precondition, action part starts consensus) and a family of
//! phase-two rules that consume the consensus responses. Phase-two rules carry
//! the tag of the phase-one rule they belong to and can only fire while a
//! decision with that tag is pending.

mod engine;
pub mod facts;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::Verdict;
use crate::graph::PowerClass;

pub use engine::{evaluate, lower_priority, select, CycleOutcome, RuleBase};
pub use facts::{Fact, FactStore};

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
    #[error("phase-two rule `{rule}` refers to missing phase-one tag `{tag}`")]
    OrphanPhaseTwo { rule: String, tag: String },
}

/// How `FindNewResource` ranks free resources.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RecruitPolicy {
    /// Power-preference order when a power manager is active, then fastest first.
    #[default]
    Default,
    /// Fastest first, ignoring power preferences.
    PowerAgnostic,
    /// Only resources of the given class, fastest first.
    OnlyClass(PowerClass),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Action {
    FindNewResource { policy: RecruitPolicy },
    AskConsensus,
    AllocateNewWorker,
    ConnectWorker,
    ConnectSslWorker,
    RemoveWorker,
    Answer(Verdict),
    LowerPriority(String),
}

impl Action {
    pub fn find_new_resource() -> Self {
        Action::FindNewResource { policy: RecruitPolicy::Default }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::FindNewResource { policy: RecruitPolicy::Default } => f.write_str("findNewResource"),
            Action::FindNewResource { policy } => write!(f, "findNewResource({policy:?})"),
            Action::AskConsensus => f.write_str("askConsensus(G', R')"),
            Action::AllocateNewWorker => f.write_str("allocateNewWorker"),
            Action::ConnectWorker => f.write_str("connectWorker"),
            Action::ConnectSslWorker => f.write_str("connectSSLWorker"),
            Action::RemoveWorker => f.write_str("removeWorker"),
            Action::Answer(v) => write!(f, "answer({v})"),
            Action::LowerPriority(r) => write!(f, "lowerPriority({r})"),
        }
    }
}

/// An ordered action list plus full replacement plans keyed by the property
/// they additionally guarantee.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub substitutes: BTreeMap<String, Vec<Action>>,
}

impl Plan {
    pub fn new(actions: Vec<Action>) -> Self {
        Plan { actions, substitutes: BTreeMap::new() }
    }

    pub fn with_substitute(mut self, property: impl Into<String>, actions: Vec<Action>) -> Self {
        self.substitutes.insert(property.into(), actions);
        self
    }
}

/// Which consensus result a phase-two rule reacts to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConsensusTrigger {
    /// Every response was an ACK.
    Ack,
    /// No NACK, and exactly this one property was requested.
    NeedProperty(String),
    Nack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    Plain,
    Ph1 { tag: String },
    Ph2 { tag: String, on: ConsensusTrigger },
}

type Test = dyn Fn(&FactStore) -> Option<bool> + Send + Sync;

/// A predicate over the fact store. Any absent variable read through `?`
/// makes the whole precondition false.
#[derive(Clone)]
pub struct Precondition {
    description: String,
    test: Arc<Test>,
}

impl Precondition {
    pub fn new(
        description: impl Into<String>,
        test: impl Fn(&FactStore) -> Option<bool> + Send + Sync + 'static,
    ) -> Self {
        Precondition { description: description.into(), test: Arc::new(test) }
    }

    pub fn always() -> Self {
        Precondition::new("true", |_| Some(true))
    }

    pub fn holds(&self, facts: &FactStore) -> bool {
        (self.test)(facts).unwrap_or(false)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// The precondition implied by a phase-two trigger.
    pub fn for_trigger(on: &ConsensusTrigger) -> Self {
        use facts::names::*;
        match on {
            ConsensusTrigger::Ack => Precondition::new("ackFromAll", |f| {
                Some(f.flag(ACK_FROM_ALL)? && f.text_set(NEED_PROPERTY)?.is_empty())
            }),
            ConsensusTrigger::NeedProperty(p) => {
                let p = p.clone();
                Precondition::new(format!("ackFromAll & needProperty({p})"), move |f| {
                    let props = f.text_set(NEED_PROPERTY)?;
                    Some(f.flag(ACK_FROM_ALL)? && props.len() == 1 && props.contains(&p))
                })
            }
            ConsensusTrigger::Nack => Precondition::new("nackConsensus", |f| f.flag(NACK_CONSENSUS)),
        }
    }
}

impl fmt::Debug for Precondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Precondition({})", self.description)
    }
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub name: String,
    /// Higher fires first.
    pub priority: u32,
    pub phase: Phase,
    pub precondition: Precondition,
    pub plan: Plan,
}

impl Rule {
    pub fn plain(name: impl Into<String>, priority: u32, precondition: Precondition, plan: Plan) -> Self {
        Rule { name: name.into(), priority, phase: Phase::Plain, precondition, plan }
    }

    pub fn phase_one(
        name: impl Into<String>,
        tag: impl Into<String>,
        priority: u32,
        precondition: Precondition,
        plan: Plan,
    ) -> Self {
        Rule { name: name.into(), priority, phase: Phase::Ph1 { tag: tag.into() }, precondition, plan }
    }

    /// A phase-two rule whose precondition follows from `on`.
    pub fn phase_two(
        name: impl Into<String>,
        tag: impl Into<String>,
        priority: u32,
        on: ConsensusTrigger,
        plan: Plan,
    ) -> Self {
        let precondition = Precondition::for_trigger(&on);
        Rule { name: name.into(), priority, phase: Phase::Ph2 { tag: tag.into(), on }, precondition, plan }
    }

    /// Phase gate plus precondition. Phase-two rules need a pending decision
    /// with their tag; every other rule is suspended while one is pending.
    pub fn is_fireable(&self, facts: &FactStore) -> bool {
        let pending = facts.text(facts::names::PENDING_DECISION);
        let gate = match &self.phase {
            Phase::Plain | Phase::Ph1 { .. } => pending.is_none(),
            Phase::Ph2 { tag, .. } => pending == Some(tag.as_str()),
        };
        gate && self.precondition.holds(facts)
    }
}
