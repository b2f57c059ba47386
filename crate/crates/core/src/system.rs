//! The management loop: simulation ticks interleaved with every manager's
//! control cycle, consensus and commit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::consensus::{
    classify, commit, propose, resolve, AbortReason, Actuator, ConsensusError, ConsensusOutcome, ConsensusResponse, CoordinationMode,
    Decision, DecisionId, DecisionLock, ProtocolEvent, ProtocolEventKind,
};
use crate::graph::{apply_delta, diff, ApplicationGraph, GraphDelta, GraphError, ResourceId};
use crate::managers::{initialize, Concern, ContractList, Manager, ManagerError};
use crate::rules::{Action, CycleOutcome, RuleError};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{power_committed, SimError, World};
use crate::trace::{to_jsonl, MgmtRecord, TraceRecord};
use crate::verdict::{audit, tick_times, RunVerdict, VerdictError};

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Manager(#[from] ManagerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub time: f64,
    pub throughput: f64,
    pub degree: usize,
    pub ssl_arcs: usize,
    pub power_committed: f64,
}

/// Shared graph before and after one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub decision: DecisionId,
    pub proposer: Concern,
    pub committed: bool,
    pub before: String,
    pub after: String,
    /// Base version of the committed delta.
    pub base_version: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub records: Vec<TraceRecord>,
    pub metrics: Vec<MetricsRow>,
    pub final_graph: ApplicationGraph,
    pub verdict: RunVerdict,
    pub audit: Vec<AuditEntry>,
}

impl RunReport {
    pub fn trace_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }

    pub fn mgmt(&self) -> impl Iterator<Item = &MgmtRecord> {
        self.records.iter().filter_map(TraceRecord::mgmt)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("time,throughput,degree,ssl_arcs,power_committed\n");
        for m in &self.metrics {
            writeln!(out, "{},{},{},{},{}", m.time, m.throughput, m.degree, m.ssl_arcs, m.power_committed)
                .expect("write to string");
        }
        out
    }

    /// Writes `trace.jsonl`, `metrics.csv`, `graph_final.json` and
    /// `verdict.json` into `dir`, creating it if needed.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), std::io::Error> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.jsonl"), self.trace_jsonl())?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        let graph = serde_json::to_string_pretty(&self.final_graph.snapshot()).expect("snapshot");
        std::fs::write(dir.join("graph_final.json"), graph + "\n")?;
        let verdict = serde_json::to_string_pretty(&self.verdict).expect("verdict");
        std::fs::write(dir.join("verdict.json"), verdict + "\n")?;
        Ok(())
    }
}

struct WorldActuator<'a> {
    world: &'a mut World,
    power_active: bool,
}

impl Actuator for WorldActuator<'_> {
    fn stage(&mut self, current: &ApplicationGraph, decision: &Decision, plan: &[Action]) -> Result<ApplicationGraph, String> {
        self.world
            .stage_plan(current, plan, decision.recruited_resource.clone(), self.power_active)
            .map(|s| s.graph)
            .map_err(|e| e.to_string())
    }

    fn install(&mut self, delta: &GraphDelta) -> Result<(), String> {
        self.world.install(delta).map_err(|e| e.to_string())
    }
}

/// A scenario wired up and ready to run.
#[derive(Debug)]
pub struct ManagedSystem {
    scenario: Scenario,
    mode: CoordinationMode,
    active: BTreeSet<Concern>,
    world: World,
    shared: ApplicationGraph,
    managers: Vec<Manager>,
    lock: DecisionLock,
    next_decision: u64,
    records: Vec<TraceRecord>,
    metrics: Vec<MetricsRow>,
    audit: Vec<AuditEntry>,
    ticks: Vec<f64>,
    next_tick: usize,
}

impl ManagedSystem {
    /// Validates the scenario, builds the initial configuration under the
    /// first contract's manager and commits it as decision 0 at time 0.
    pub fn new(scenario: &Scenario) -> Result<Self, SystemError> {
        scenario.validate()?;
        let contracts = ContractList::new(scenario.contracts.clone())?;
        let pool = scenario.resources()?;
        let (initial, managers) = initialize(&contracts, &scenario.skeleton, &pool, &scenario.knobs)?;
        let world = World::new(scenario.skeleton.clone(), pool, scenario.workload.clone(), scenario.sim.clone())?;
        let mut sys = ManagedSystem {
            scenario: scenario.clone(),
            mode: scenario.mode,
            active: contracts.concerns(),
            world,
            shared: ApplicationGraph::empty(),
            managers,
            lock: DecisionLock::default(),
            next_decision: 0,
            records: Vec::new(),
            metrics: Vec::new(),
            audit: Vec::new(),
            ticks: tick_times(scenario.sim.tick, scenario.sim.run_length),
            next_tick: 0,
        };
        sys.commit_initial(contracts.first().concern(), initial)?;
        Ok(sys)
    }

    fn commit_initial(&mut self, by: Concern, g: ApplicationGraph) -> Result<(), SystemError> {
        let id = self.fresh_id();
        let before = self.shared.snapshot_string();
        let delta = diff(&self.shared, &g);
        let next = apply_delta(&self.shared, &delta)?;
        self.world.install(&delta)?;
        self.shared = next;
        for m in &mut self.managers {
            m.adopt(self.shared.clone());
        }
        let detail = json!({"plan": [], "delta": delta, "version": self.shared.version(), "seed": self.scenario.sim.seed});
        self.push_mgmt(0.0, vec![ProtocolEvent::new(ProtocolEventKind::Commit, id, by.to_string(), detail)]);
        self.audit.push(AuditEntry {
            decision: id,
            proposer: by,
            committed: true,
            before,
            after: self.shared.snapshot_string(),
            base_version: Some(delta.base_version),
        });
        Ok(())
    }

    pub fn mode(&self) -> CoordinationMode {
        self.mode
    }

    pub fn shared_graph(&self) -> &ApplicationGraph {
        &self.shared
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn managers(&self) -> &[Manager] {
        &self.managers
    }

    pub fn manager_mut(&mut self, concern: Concern) -> Option<&mut Manager> {
        self.managers.iter_mut().find(|m| m.concern() == concern)
    }

    fn fresh_id(&mut self) -> DecisionId {
        let id = DecisionId(self.next_decision);
        self.next_decision += 1;
        id
    }

    fn push_mgmt(&mut self, t: f64, events: Vec<ProtocolEvent>) {
        self.records.extend(events.into_iter().map(|e| TraceRecord::Mgmt(MgmtRecord::from_event(t, e))));
    }

    fn drain_sim(&mut self) {
        self.records.extend(self.world.take_events().into_iter().map(TraceRecord::Sim));
    }

    /// Runs the ticks scheduled at or before `until`.
    pub fn advance(&mut self, until: f64) -> Result<(), SystemError> {
        while let Some(&t) = self.ticks.get(self.next_tick) {
            if t > until {
                break;
            }
            self.tick(t)?;
            self.next_tick += 1;
        }
        Ok(())
    }

    /// Simulated time of the last completed tick.
    pub fn now(&self) -> f64 {
        self.next_tick.checked_sub(1).map_or(0.0, |i| self.ticks[i])
    }

    /// Runs the remaining ticks and audits the trace.
    pub fn run(mut self) -> Result<RunReport, SystemError> {
        self.advance(f64::INFINITY)?;
        let audit_result = audit(&self.records, &self.scenario)?;
        Ok(RunReport {
            records: self.records,
            metrics: self.metrics,
            final_graph: self.shared,
            verdict: audit_result.verdict,
            audit: self.audit,
        })
    }

    fn tick(&mut self, t: f64) -> Result<(), SystemError> {
        self.world.step(t)?;
        self.drain_sim();
        let snap = self.world.monitor(t);
        for m in &mut self.managers {
            m.observe(&snap);
        }
        for i in 0..self.managers.len() {
            match self.managers[i].control_cycle() {
                CycleOutcome::Idle => {}
                CycleOutcome::Execute { rule, actions } => self.execute(i, t, rule, actions)?,
                CycleOutcome::Propose { rule, tag, .. } => self.decide(i, t, rule, tag)?,
                CycleOutcome::Abort { rule, .. } => {
                    log::warn!("{} selected phase-two rule {rule} outside a decision", self.managers[i].concern());
                }
            }
        }
        self.metrics.push(MetricsRow {
            time: t,
            throughput: snap.sink_throughput,
            degree: self.shared.managed_farm().map_or(0, |f| f.degree()),
            ssl_arcs: self.shared.ssl_arc_count(),
            power_committed: power_committed(&self.shared, self.world.pool()),
        });
        Ok(())
    }

    fn power_active(&self) -> bool {
        self.active.contains(&Concern::Power)
    }

    /// A plain rule: actuated directly under the lock, without consensus.
    fn execute(&mut self, i: usize, t: f64, rule: String, actions: Vec<Action>) -> Result<(), SystemError> {
        let proposer = self.managers[i].concern();
        let id = self.fresh_id();
        self.lock.acquire(id)?;
        let decision = Decision {
            id,
            proposer,
            rule: rule.clone(),
            tag: rule,
            proposed_delta: GraphDelta::empty(self.shared.version()),
            recruited_resource: None,
            base_plan: actions.clone(),
            substitutes: Default::default(),
        };
        let outcome = ConsensusOutcome::Commit { final_plan: actions };
        let committed = self.finish(&decision, &outcome, t)?;
        if committed {
            self.managers[i].reset_priorities();
        }
        self.lock.release(id)?;
        Ok(())
    }

    /// A phase-one rule: propose, collect answers, resolve, then commit or
    /// hand the refusal to the proposer's phase-two rules.
    fn decide(&mut self, i: usize, t: f64, rule: String, tag: String) -> Result<(), SystemError> {
        let proposer = self.managers[i].concern();
        let plan = self.managers[i]
            .decision_plan(&tag)
            .ok_or_else(|| RuleError::UnknownRule(format!("{tag}^PH1")))?;
        let registry = self.managers[i].registry();
        let id = self.fresh_id();
        self.lock.acquire(id)?;

        let staged = self.world.stage_plan(&self.shared, &plan.actions, None, self.power_active());
        let (proposed_delta, recruited) = match &staged {
            Ok(s) => (diff(&self.shared, &s.graph), s.recruited.clone()),
            Err(_) => (GraphDelta::empty(self.shared.version()), None),
        };
        let decision = Decision {
            id,
            proposer,
            rule: rule.clone(),
            tag: tag.clone(),
            proposed_delta,
            recruited_resource: recruited,
            base_plan: plan.actions.clone(),
            substitutes: plan.substitutes.clone(),
        };
        let labels: Vec<_> = decision
            .base_plan
            .iter()
            .map(|a| json!({"action": a, "label": classify(a, &self.active, &self.shared, &decision)}))
            .collect();
        let propose_detail = json!({
            "rule": rule,
            "plan": decision.base_plan,
            "substitutes": decision.substitutes,
            "delta": decision.proposed_delta,
            "recruited": decision.recruited_resource,
            "labels": labels,
        });
        self.push_mgmt(t, vec![ProtocolEvent::new(ProtocolEventKind::Propose, id, proposer.to_string(), propose_detail)]);

        let (committed, responses) = match staged {
            Err(e) => {
                let outcome = ConsensusOutcome::Abort { reason: AbortReason::ActionFailure(e.to_string()) };
                (self.finish(&decision, &outcome, t)?, Vec::new())
            }
            Ok(_) => {
                let (responses, events) = propose(&decision, self.mode, &self.shared, &mut self.managers, &registry)?;
                self.push_mgmt(t, events);
                let outcome = resolve(&decision, &responses);
                (self.finish(&decision, &outcome, t)?, responses)
            }
        };
        if committed {
            self.managers[i].reset_priorities();
        } else {
            self.after_refusal(i, t, &decision, &responses)?;
        }
        self.lock.release(id)?;
        Ok(())
    }

    /// Commits (or aborts) and records the before/after audit entry. Returns
    /// whether the shared graph changed.
    fn finish(&mut self, decision: &Decision, outcome: &ConsensusOutcome, t: f64) -> Result<bool, SystemError> {
        let before = self.shared.snapshot_string();
        let power_active = self.power_active();
        let mut actuator = WorldActuator { world: &mut self.world, power_active };
        let result = commit(outcome, decision, self.mode, &mut self.shared, &mut actuator, &mut self.managers)?;
        let committed = result.outcome.is_commit();
        self.push_mgmt(t, result.events);
        self.drain_sim();
        self.audit.push(AuditEntry {
            decision: decision.id,
            proposer: decision.proposer,
            committed,
            before,
            after: self.shared.snapshot_string(),
            base_version: result.delta.as_ref().map(|d| d.base_version),
        });
        Ok(committed)
    }

    /// Phase two after an abort: runs the proposer's NACK rules.
    fn after_refusal(
        &mut self,
        i: usize,
        t: f64,
        decision: &Decision,
        responses: &[ConsensusResponse],
    ) -> Result<(), SystemError> {
        let outcome = ConsensusOutcome::Abort { reason: AbortReason::AnyNack };
        let CycleOutcome::Abort { actions, .. } = self.managers[i].phase_two(&decision.tag, &outcome, responses) else {
            return Ok(());
        };
        for a in actions {
            if let Action::LowerPriority(rule) = a {
                let priority = self.managers[i].lower_priority(&rule)?;
                let detail = json!({"rule": rule, "priority": priority});
                let by = self.managers[i].concern().to_string();
                self.push_mgmt(t, vec![ProtocolEvent::new(ProtocolEventKind::LowerPriority, decision.id, by, detail)]);
            }
        }
        Ok(())
    }
}

/// Loads, runs and audits a scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, SystemError> {
    ManagedSystem::new(scenario)?.run()
}

/// Resource ids placed in `g`.
pub fn placed_resources(g: &ApplicationGraph) -> BTreeSet<ResourceId> {
    g.nodes().values().filter_map(|n| n.meta.location().cloned()).collect()
}
