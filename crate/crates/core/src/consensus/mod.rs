//! Two-phase consensus between concern managers.
//!
//! A proposer broadcasts a [`Decision`] (proposed delta G′ plus recruited
//! resource R′), every other active manager answers once, [`resolve`] turns
//! the answers into a final plan or an abort, and [`commit`] actuates the plan
//! atomically and notifies every manager of the resulting delta. The whole
//! sequence runs under one global [`DecisionLock`].

mod resolve;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::graph::{apply_delta, diff, ApplicationGraph, GraphDelta, GraphError, ResourceId};
use crate::managers::Concern;
use crate::rules::Action;

pub use resolve::resolve;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Verdict {
    Ack,
    Nack,
    NeedProperty(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Ack => f.write_str("ACK"),
            Verdict::Nack => f.write_str("NACK"),
            Verdict::NeedProperty(p) => write!(f, "needProperty({p})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusResponse {
    pub responder: Concern,
    pub verdict: Verdict,
}

impl ConsensusResponse {
    pub fn new(responder: Concern, verdict: Verdict) -> Self {
        ConsensusResponse { responder, verdict }
    }
}

/// Globally unique, sequential decision tag. Id 0 is the initial configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionId(pub u64);

impl fmt::Display for DecisionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub id: DecisionId,
    pub proposer: Concern,
    /// Name of the rule that produced the decision.
    pub rule: String,
    /// Phase-one tag correlating the responses with phase-two rules.
    pub tag: String,
    /// G′ relative to the shared graph at proposal time.
    pub proposed_delta: GraphDelta,
    /// R′.
    pub recruited_resource: Option<ResourceId>,
    pub base_plan: Vec<Action>,
    pub substitutes: BTreeMap<String, Vec<Action>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AbortReason {
    AnyNack,
    InconsistentSubstitutes,
    /// The runtime rejected an action of the final plan.
    ActionFailure(String),
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::AnyNack => f.write_str("AnyNack"),
            AbortReason::InconsistentSubstitutes => f.write_str("InconsistentSubstitutes"),
            AbortReason::ActionFailure(e) => write!(f, "ActionFailure({e})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ConsensusOutcome {
    Commit { final_plan: Vec<Action> },
    Abort { reason: AbortReason },
}

impl ConsensusOutcome {
    pub fn is_commit(&self) -> bool {
        matches!(self, ConsensusOutcome::Commit { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinationMode {
    /// A super manager (AM_0) relays proposals, aggregates answers and owns the graph.
    #[default]
    Sm,
    /// The proposer broadcasts to its peers directly.
    Cm,
}

impl std::str::FromStr for CoordinationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sm" => Ok(CoordinationMode::Sm),
            "cm" => Ok(CoordinationMode::Cm),
            other => Err(format!("unknown coordination mode `{other}` (expected sm or cm)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interference {
    Independent,
    Interfering,
}

/// Labels one action of a proposed plan against the concerns other than the
/// proposer's.
pub fn classify(
    action: &Action,
    active: &BTreeSet<Concern>,
    graph: &ApplicationGraph,
    decision: &Decision,
) -> Interference {
    let other = |c: Concern| c != decision.proposer && active.contains(&c);
    let interfering = match action {
        Action::ConnectWorker | Action::ConnectSslWorker => {
            other(Concern::Security) && !recruit_is_secure(graph, decision)
        }
        Action::AllocateNewWorker => other(Concern::Power),
        Action::FindNewResource { .. }
        | Action::AskConsensus
        | Action::Answer(_)
        | Action::LowerPriority(_)
        | Action::RemoveWorker => false,
    };
    if interfering {
        Interference::Interfering
    } else {
        Interference::Independent
    }
}

fn recruit_is_secure(graph: &ApplicationGraph, decision: &Decision) -> bool {
    let Some(r) = &decision.recruited_resource else { return false };
    let in_delta = decision
        .proposed_delta
        .added_nodes
        .iter()
        .find(|n| n.meta.location() == Some(r))
        .map(|n| n.meta.secure());
    let in_graph = || graph.nodes().values().find(|n| n.meta.location() == Some(r)).map(|n| n.meta.secure());
    in_delta.or_else(in_graph).flatten() == Some(true)
}

#[derive(Debug, thiserror::Error)]
pub enum ConsensusError {
    #[error("decision {decision} is based on graph version {proposed} but the shared graph is at {current}")]
    StaleDecision { decision: DecisionId, proposed: u64, current: u64 },
    #[error("decision lock is held by {0}")]
    LockHeld(DecisionId),
    #[error("decision lock is not held by {0}")]
    LockNotHeld(DecisionId),
    #[error("committed delta could not be applied: {0}")]
    Apply(#[from] GraphError),
}

/// The single system-wide lock covering propose → resolve → commit.
#[derive(Debug, Default)]
pub struct DecisionLock {
    holder: Option<DecisionId>,
}

impl DecisionLock {
    pub fn acquire(&mut self, id: DecisionId) -> Result<(), ConsensusError> {
        match self.holder {
            Some(h) => Err(ConsensusError::LockHeld(h)),
            None => {
                self.holder = Some(id);
                Ok(())
            }
        }
    }

    pub fn release(&mut self, id: DecisionId) -> Result<(), ConsensusError> {
        if self.holder != Some(id) {
            return Err(ConsensusError::LockNotHeld(id));
        }
        self.holder = None;
        Ok(())
    }

    pub fn holder(&self) -> Option<DecisionId> {
        self.holder
    }
}

/// Protocol message kinds recorded in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ProtocolEventKind {
    Propose,
    Response,
    Commit,
    Abort,
    /// A hop through the super manager (SM mode only).
    Relay,
    LowerPriority,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolEvent {
    pub kind: ProtocolEventKind,
    pub decision: DecisionId,
    pub by: String,
    pub detail: Value,
}

impl ProtocolEvent {
    pub fn new(kind: ProtocolEventKind, decision: DecisionId, by: impl Into<String>, detail: Value) -> Self {
        ProtocolEvent { kind, decision, by: by.into(), detail }
    }
}

pub const SUPER_MANAGER: &str = "AM_0";

/// A manager able to answer phase one.
pub trait Responder {
    fn concern(&self) -> Concern;
    fn respond(&mut self, decision: &Decision, proposer_registry: &BTreeSet<String>) -> Verdict;
}

/// A manager that keeps a local copy of the graph.
pub trait DeltaObserver {
    fn notify(&mut self, delta: &GraphDelta) -> Result<(), GraphError>;
}

/// Executes plans against the runtime.
pub trait Actuator {
    /// Runs `plan` on a scratch copy of `current` and returns the resulting
    /// graph. Nothing observable changes if this fails.
    fn stage(&mut self, current: &ApplicationGraph, decision: &Decision, plan: &[Action]) -> Result<ApplicationGraph, String>;
    /// Makes a committed delta live.
    fn install(&mut self, delta: &GraphDelta) -> Result<(), String>;
}

fn relay(events: &mut Vec<ProtocolEvent>, mode: CoordinationMode, decision: DecisionId, detail: Value) {
    if mode == CoordinationMode::Sm {
        events.push(ProtocolEvent::new(ProtocolEventKind::Relay, decision, SUPER_MANAGER, detail));
    }
}

/// Phase one. Responders are queried in slice order, which callers keep equal
/// to contract order; the proposer itself is skipped.
pub fn propose<R: Responder>(
    decision: &Decision,
    mode: CoordinationMode,
    shared: &ApplicationGraph,
    responders: &mut [R],
    proposer_registry: &BTreeSet<String>,
) -> Result<(Vec<ConsensusResponse>, Vec<ProtocolEvent>), ConsensusError> {
    if decision.proposed_delta.base_version != shared.version() {
        return Err(ConsensusError::StaleDecision {
            decision: decision.id,
            proposed: decision.proposed_delta.base_version,
            current: shared.version(),
        });
    }
    let mut responses = Vec::new();
    let mut events = Vec::new();
    for r in responders.iter_mut().filter(|r| r.concern() != decision.proposer) {
        let responder = r.concern();
        relay(&mut events, mode, decision.id, json!({"to": responder, "forward": "propose"}));
        let mut verdict = r.respond(decision, proposer_registry);
        if let Verdict::NeedProperty(p) = &verdict {
            if !proposer_registry.contains(p) {
                log::warn!("{responder} asked for unadvertised property `{p}` on {}; treating as NACK", decision.id);
                verdict = Verdict::Nack;
            }
        }
        events.push(ProtocolEvent::new(
            ProtocolEventKind::Response,
            decision.id,
            responder.to_string(),
            json!({"verdict": verdict}),
        ));
        responses.push(ConsensusResponse::new(responder, verdict));
    }
    relay(&mut events, mode, decision.id, json!({"to": decision.proposer, "forward": "responses"}));
    Ok((responses, events))
}

/// Result of [`commit`].
#[derive(Debug)]
pub struct Committed {
    /// The outcome actually realised: a committed outcome can still turn into
    /// an abort when an action fails.
    pub outcome: ConsensusOutcome,
    pub delta: Option<GraphDelta>,
    pub events: Vec<ProtocolEvent>,
}

/// Phase two. On commit the final plan is staged as a whole, diffed against
/// the shared graph, applied, installed and broadcast; on abort (or any action
/// failure) the shared graph is left untouched.
pub fn commit<O: DeltaObserver>(
    outcome: &ConsensusOutcome,
    decision: &Decision,
    mode: CoordinationMode,
    shared: &mut ApplicationGraph,
    actuator: &mut dyn Actuator,
    observers: &mut [O],
) -> Result<Committed, ConsensusError> {
    let by = decision.proposer.to_string();
    let abort = |reason: AbortReason| {
        let detail = json!({"reason": reason});
        Committed {
            events: vec![ProtocolEvent::new(ProtocolEventKind::Abort, decision.id, by.clone(), detail)],
            outcome: ConsensusOutcome::Abort { reason },
            delta: None,
        }
    };
    let plan = match outcome {
        ConsensusOutcome::Abort { reason } => return Ok(abort(reason.clone())),
        ConsensusOutcome::Commit { final_plan } => final_plan,
    };
    let staged = match actuator.stage(shared, decision, plan) {
        Ok(g) => g,
        Err(e) => return Ok(abort(AbortReason::ActionFailure(e))),
    };
    let delta = diff(shared, &staged);
    let next = match apply_delta(shared, &delta) {
        Ok(g) => g,
        Err(e) => return Ok(abort(AbortReason::ActionFailure(e.to_string()))),
    };
    if let Err(e) = actuator.install(&delta) {
        return Ok(abort(AbortReason::ActionFailure(e)));
    }
    *shared = next;
    let mut events = vec![ProtocolEvent::new(
        ProtocolEventKind::Commit,
        decision.id,
        by,
        json!({"plan": plan, "delta": delta, "version": shared.version()}),
    )];
    relay(&mut events, mode, decision.id, json!({"forward": "delta", "to": "all"}));
    for o in observers.iter_mut() {
        o.notify(&delta)?;
    }
    Ok(Committed { outcome: outcome.clone(), delta: Some(delta), events })
}
