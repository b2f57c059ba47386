use std::collections::{BTreeMap, BTreeSet};

use crate::consensus::ConsensusResponse;
use crate::graph::GraphDelta;

/// Well-known fact names.
pub mod names {
    /// Mean inter-arrival time at the farm emitter (seconds).
    pub const T_ARR: &str = "T_arr";
    /// Completions per second at the farm collector.
    pub const THROUGHPUT: &str = "Throughput";
    /// Contracted minimum throughput (tasks/second).
    pub const QOS_RATE: &str = "QoS_rate";
    pub const INSTANCEOF_FARM: &str = "instanceof_farm";
    pub const FARM_DEGREE: &str = "farmDegree";

    pub const PENDING_DECISION: &str = "pendingDecision";
    pub const ACK_FROM_ALL: &str = "ackFromAll";
    pub const NACK_CONSENSUS: &str = "nackConsensus";
    pub const NEED_PROPERTY: &str = "needProperty";
    pub const RESPONSES: &str = "responses";

    /// Proposed delta under consensus (responder side).
    pub const CONSENSUS_ASKED: &str = "consensusAsked";
    pub const DECISION_ID: &str = "decisionId";
    pub const PROPOSER: &str = "proposer";
    pub const PROPOSER_REGISTRY: &str = "proposerRegistry";

    pub const TRUSTED_RESOURCES: &str = "trustedResources";
    pub const POWER_COMMITTED: &str = "powerCommitted";
    pub const POWER_AFTER: &str = "proposedPowerAfter";
    pub const POWER_BUDGET: &str = "powerBudget";
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fact {
    Number(f64),
    Bool(bool),
    Text(String),
    TextSet(BTreeSet<String>),
    Delta(Box<GraphDelta>),
    Responses(Vec<ConsensusResponse>),
}

impl From<f64> for Fact {
    fn from(v: f64) -> Self {
        Fact::Number(v)
    }
}

impl From<bool> for Fact {
    fn from(v: bool) -> Self {
        Fact::Bool(v)
    }
}

impl From<String> for Fact {
    fn from(v: String) -> Self {
        Fact::Text(v)
    }
}

impl From<&str> for Fact {
    fn from(v: &str) -> Self {
        Fact::Text(v.to_string())
    }
}

impl From<BTreeSet<String>> for Fact {
    fn from(v: BTreeSet<String>) -> Self {
        Fact::TextSet(v)
    }
}

impl From<GraphDelta> for Fact {
    fn from(v: GraphDelta) -> Self {
        Fact::Delta(Box::new(v))
    }
}

impl From<Vec<ConsensusResponse>> for Fact {
    fn from(v: Vec<ConsensusResponse>) -> Self {
        Fact::Responses(v)
    }
}

/// Variables visible to rule preconditions. Typed getters return `None` both
/// for absent variables and for type mismatches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactStore {
    entries: BTreeMap<String, Fact>,
}

impl FactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Fact>) -> &mut Self {
        self.entries.insert(name.into(), value.into());
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Fact>) -> Self {
        self.set(name, value);
        self
    }

    pub fn remove(&mut self, name: &str) -> Option<Fact> {
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Fact> {
        self.entries.get(name)
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        match self.entries.get(name)? {
            Fact::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        match self.entries.get(name)? {
            Fact::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.entries.get(name)? {
            Fact::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn text_set(&self, name: &str) -> Option<&BTreeSet<String>> {
        match self.entries.get(name)? {
            Fact::TextSet(v) => Some(v),
            _ => None,
        }
    }

    pub fn delta(&self, name: &str) -> Option<&GraphDelta> {
        match self.entries.get(name)? {
            Fact::Delta(v) => Some(v),
            _ => None,
        }
    }

    pub fn responses(&self, name: &str) -> Option<&[ConsensusResponse]> {
        match self.entries.get(name)? {
            Fact::Responses(v) => Some(v),
            _ => None,
        }
    }

    /// Drops every consensus-phase fact.
    pub fn clear_consensus(&mut self) {
        for n in [
            names::PENDING_DECISION,
            names::ACK_FROM_ALL,
            names::NACK_CONSENSUS,
            names::NEED_PROPERTY,
            names::RESPONSES,
            names::CONSENSUS_ASKED,
            names::DECISION_ID,
            names::PROPOSER,
            names::PROPOSER_REGISTRY,
        ] {
            self.entries.remove(n);
        }
    }
}
