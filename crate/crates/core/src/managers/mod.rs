//! Per-concern autonomic managers.

mod init;
mod library;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusOutcome, ConsensusResponse, Decision, DeltaObserver, Responder, Verdict};
use crate::graph::{apply_delta, ApplicationGraph, GraphDelta, GraphError};
use crate::rules::facts::names::*;
use crate::rules::{evaluate, Action, CycleOutcome, FactStore, Plan, RuleBase, RuleError};
use crate::sim::{power_committed, MonitorSnapshot, ResourcePool};

pub use init::{initialize, placement_order};
pub use library::{build_performance_rules, build_power_rules, build_security_rules, FARM_DEC, FARM_INC, FARM_INC_GREEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Concern {
    #[serde(rename = "AM_P")]
    Performance,
    #[serde(rename = "AM_S")]
    Security,
    #[serde(rename = "AM_W")]
    Power,
}

impl fmt::Display for Concern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concern::Performance => "AM_P",
            Concern::Security => "AM_S",
            Concern::Power => "AM_W",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum QoSContract {
    /// Every transfer to or from an untrusted node is secured.
    SecureData,
    /// Tasks per second.
    MinThroughput { rate: f64 },
    /// Upper bound on the summed power cost of the resources in use.
    PowerBudget { budget: f64 },
}

impl QoSContract {
    pub fn concern(&self) -> Concern {
        match self {
            QoSContract::SecureData => Concern::Security,
            QoSContract::MinThroughput { .. } => Concern::Performance,
            QoSContract::PowerBudget { .. } => Concern::Power,
        }
    }

    /// Name used in verdict files.
    pub fn key(&self) -> &'static str {
        match self {
            QoSContract::SecureData => "secureData",
            QoSContract::MinThroughput { .. } => "minThroughput",
            QoSContract::PowerBudget { .. } => "powerBudget",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error("at least one contract is required")]
    NoContracts,
    #[error("more than one contract for {0}")]
    DuplicateConcern(Concern),
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("placement needs {needed} resources but only {available} are eligible")]
    InsufficientResources { needed: usize, available: usize },
    #[error("the resource pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

/// Ordered contracts; the order sets manager precedence.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractList(Vec<QoSContract>);

impl ContractList {
    pub fn new(contracts: Vec<QoSContract>) -> Result<Self, ManagerError> {
        if contracts.is_empty() {
            return Err(ManagerError::NoContracts);
        }
        let mut seen = BTreeSet::new();
        for c in &contracts {
            if !seen.insert(c.concern()) {
                return Err(ManagerError::DuplicateConcern(c.concern()));
            }
            match c {
                QoSContract::MinThroughput { rate } if !(*rate > 0.0) => {
                    return Err(ManagerError::InvalidContract(format!("rate must be positive, got {rate}")))
                }
                QoSContract::PowerBudget { budget } if !(*budget > 0.0) => {
                    return Err(ManagerError::InvalidContract(format!("budget must be positive, got {budget}")))
                }
                _ => {}
            }
        }
        Ok(ContractList(contracts))
    }

    pub fn iter(&self) -> impl Iterator<Item = &QoSContract> {
        self.0.iter()
    }

    pub fn first(&self) -> &QoSContract {
        &self.0[0]
    }

    pub fn concerns(&self) -> BTreeSet<Concern> {
        self.0.iter().map(QoSContract::concern).collect()
    }

    pub fn has(&self, c: Concern) -> bool {
        self.0.iter().any(|k| k.concern() == c)
    }
}

/// Numeric rule-engine knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    pub hysteresis_factor: f64,
    /// Initial priority per rule name; rules not listed start at 5.
    pub priorities: BTreeMap<String, u32>,
    /// Size the farm to the whole pool when the performance manager builds
    /// the initial configuration.
    pub max_greedy: bool,
    pub default_degree: u32,
    /// Add an equal-priority green-only variant of the farm growth rule, and
    /// make the primary variant ignore power preferences.
    pub green_alternative: bool,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            hysteresis_factor: 1.5,
            priorities: BTreeMap::new(),
            max_greedy: false,
            default_degree: 4,
            green_alternative: false,
        }
    }
}

impl Knobs {
    pub const DEFAULT_PRIORITY: u32 = 5;

    pub fn priority(&self, rule: &str) -> u32 {
        self.priorities.get(rule).copied().unwrap_or(Self::DEFAULT_PRIORITY)
    }
}

/// One concern's manager: its rules, fact store and local view of the graph.
#[derive(Clone, Debug)]
pub struct Manager {
    concern: Concern,
    contract: QoSContract,
    rules: RuleBase,
    facts: FactStore,
    graph: ApplicationGraph,
    pool: ResourcePool,
}

impl Manager {
    /// A manager with the built-in rule library for `contract`.
    pub fn new(contract: QoSContract, knobs: &Knobs, pool: ResourcePool) -> Result<Self, ManagerError> {
        let rules = match &contract {
            QoSContract::MinThroughput { rate } => build_performance_rules(*rate, knobs),
            QoSContract::SecureData => build_security_rules(knobs),
            QoSContract::PowerBudget { budget } => build_power_rules(*budget, knobs),
        };
        Self::with_rules(contract, RuleBase::new(rules)?, pool)
    }

    pub fn with_rules(contract: QoSContract, rules: RuleBase, pool: ResourcePool) -> Result<Self, ManagerError> {
        let mut facts = FactStore::new();
        match &contract {
            QoSContract::MinThroughput { rate } => {
                facts.set(QOS_RATE, *rate);
            }
            QoSContract::PowerBudget { budget } => {
                facts.set(POWER_BUDGET, *budget);
            }
            QoSContract::SecureData => {
                let trusted: BTreeSet<String> =
                    pool.iter().filter(|r| r.trusted()).map(|r| r.id.as_str().to_string()).collect();
                facts.set(TRUSTED_RESOURCES, trusted);
            }
        }
        Ok(Manager { concern: contract.concern(), contract, rules, facts, graph: ApplicationGraph::empty(), pool })
    }

    pub fn concern(&self) -> Concern {
        self.concern
    }

    pub fn contract(&self) -> &QoSContract {
        &self.contract
    }

    pub fn rules(&self) -> &RuleBase {
        &self.rules
    }

    pub fn set_rules(&mut self, rules: RuleBase) {
        self.rules = rules;
    }

    pub fn facts(&self) -> &FactStore {
        &self.facts
    }

    /// The manager's local copy of the shared graph.
    pub fn graph(&self) -> &ApplicationGraph {
        &self.graph
    }

    /// Monitor phase: refreshes the monitored variables.
    pub fn observe(&mut self, snap: &MonitorSnapshot) {
        let committed = power_committed(&self.graph, &self.pool);
        let is_farm = self.graph.managed_farm().is_some();
        let f = &mut self.facts;
        match snap.t_arr {
            Some(t) => {
                f.set(T_ARR, t);
            }
            None => {
                f.remove(T_ARR);
            }
        }
        f.set(THROUGHPUT, snap.throughput)
            .set(INSTANCEOF_FARM, is_farm)
            .set(FARM_DEGREE, snap.degree as f64)
            .set(POWER_COMMITTED, committed);
    }

    pub fn control_cycle(&self) -> CycleOutcome {
        self.rules.control_cycle(&self.facts)
    }

    /// Runs the phase-two rules for a decision this manager proposed.
    pub fn phase_two(&self, tag: &str, outcome: &ConsensusOutcome, responses: &[ConsensusResponse]) -> CycleOutcome {
        let mut facts = self.facts.clone();
        let props: BTreeSet<String> = responses
            .iter()
            .filter_map(|r| match &r.verdict {
                Verdict::NeedProperty(p) => Some(p.clone()),
                _ => None,
            })
            .collect();
        let aborted = !outcome.is_commit();
        facts
            .set(PENDING_DECISION, tag)
            .set(ACK_FROM_ALL, !aborted)
            .set(NACK_CONSENSUS, aborted)
            .set(NEED_PROPERTY, props)
            .set(RESPONSES, responses.to_vec());
        self.rules.control_cycle(&facts)
    }

    pub fn decision_plan(&self, tag: &str) -> Option<Plan> {
        self.rules.decision_plan(tag)
    }

    pub fn registry(&self) -> BTreeSet<String> {
        self.rules.registry()
    }

    pub fn lower_priority(&mut self, rule: &str) -> Result<u32, RuleError> {
        self.rules.lower(rule)
    }

    pub fn reset_priorities(&mut self) {
        self.rules.reset_priorities();
    }

    /// Installs a graph directly (initial configuration only).
    pub(crate) fn adopt(&mut self, g: ApplicationGraph) {
        self.graph = g;
    }
}

impl Responder for Manager {
    fn concern(&self) -> Concern {
        self.concern
    }

    /// Evaluates the manager's answer rules against the proposal; with no
    /// answer rule firing the manager has no objection.
    fn respond(&mut self, decision: &Decision, proposer_registry: &BTreeSet<String>) -> Verdict {
        let mut facts = self.facts.clone();
        facts
            .set(CONSENSUS_ASKED, decision.proposed_delta.clone())
            .set(DECISION_ID, decision.id.0 as f64)
            .set(PROPOSER, decision.proposer.to_string())
            .set(PROPOSER_REGISTRY, proposer_registry.clone());
        match apply_delta(&self.graph, &decision.proposed_delta) {
            Ok(next) => {
                facts.set(POWER_AFTER, power_committed(&next, &self.pool));
            }
            Err(e) => {
                log::warn!("{} cannot apply proposal {}: {e}", self.concern, decision.id);
                return Verdict::Nack;
            }
        }
        evaluate(self.rules.rules(), &facts)
            .into_iter()
            .find_map(|r| match r.plan.actions.first() {
                Some(Action::Answer(v)) => Some(v.clone()),
                _ => None,
            })
            .unwrap_or(Verdict::Ack)
    }
}

impl DeltaObserver for Manager {
    fn notify(&mut self, delta: &GraphDelta) -> Result<(), GraphError> {
        self.graph = apply_delta(&self.graph, delta)?;
        Ok(())
    }
}
