//! Contract audit computed from a trace alone.
//!
//! The graph is rebuilt by replaying the deltas carried by commit records,
//! and throughput is counted from completion events at the graph's sinks, so
//! nothing here reads manager state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::ProtocolEventKind;
use crate::graph::{apply_delta, ApplicationGraph, ChannelKind, GraphDelta, GraphError};
use crate::managers::QoSContract;
use crate::scenario::Scenario;
use crate::sim::{power_committed, ResourcePool, SimError, SimEventKind};
use crate::trace::TraceRecord;

/// Consecutive satisfied ticks required for convergence.
pub const STABLE_TICKS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum VerdictError {
    #[error("commit record for decision {decision} carries no readable delta: {source}")]
    BadDelta { decision: u64, source: serde_json::Error },
    #[error("commit record for decision {decision} does not apply: {source}")]
    Replay { decision: u64, source: GraphError },
    #[error(transparent)]
    Pool(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub converged: bool,
    /// 1-based index of the tick that starts the final satisfied streak.
    pub ticks_to_converge: Option<usize>,
    pub final_throughput: f64,
    /// Contract state at the last tick, keyed by contract kind.
    pub contracts_satisfied: BTreeMap<String, bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickAudit {
    pub time: f64,
    pub throughput: f64,
    pub degree: usize,
    pub satisfied: BTreeMap<String, bool>,
}

impl TickAudit {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.values().all(|s| *s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Audit {
    pub ticks: Vec<TickAudit>,
    pub final_graph: ApplicationGraph,
    pub verdict: RunVerdict,
}

/// Monitoring instants of a run: `tick, 2·tick, …` up to the run length.
pub fn tick_times(tick: f64, run_length: f64) -> Vec<f64> {
    let n = (run_length / tick + 1e-9).floor() as usize;
    (1..=n).map(|k| k as f64 * tick).collect()
}

/// Every arc touching a node hosted on an untrusted resource is Ssl.
pub fn secure_data_holds(g: &ApplicationGraph, pool: &ResourcePool) -> bool {
    let untrusted = |n| {
        g.node(n)
            .and_then(|r| r.meta.location())
            .and_then(|loc| pool.get(loc))
            .map_or(true, |r| !r.trusted())
    };
    g.arcs()
        .iter()
        .filter(|(a, _)| untrusted(&a.from) || untrusted(&a.to))
        .all(|(_, r)| r.meta.channel_kind() == Some(ChannelKind::Ssl))
}

fn satisfied(c: &QoSContract, g: &ApplicationGraph, pool: &ResourcePool, throughput: f64) -> bool {
    match c {
        QoSContract::SecureData => secure_data_holds(g, pool),
        QoSContract::MinThroughput { rate } => throughput >= *rate - 1e-9,
        QoSContract::PowerBudget { budget } => power_committed(g, pool) <= *budget + 1e-9,
    }
}

pub fn audit(records: &[TraceRecord], scenario: &Scenario) -> Result<Audit, VerdictError> {
    let pool = scenario.resources()?;
    let cfg = &scenario.sim;
    let mut graph = ApplicationGraph::empty();
    let mut sink_done: Vec<f64> = Vec::new();
    let mut ticks = Vec::new();
    let mut next = 0;

    for t in tick_times(cfg.tick, cfg.run_length) {
        while let Some(r) = records.get(next).filter(|r| r.t() <= t) {
            match r {
                TraceRecord::Sim(e) if e.ev == SimEventKind::Complete => {
                    if graph.node(&e.node).is_some() && graph.out_arcs(&e.node).next().is_none() {
                        sink_done.push(e.t);
                    }
                }
                TraceRecord::Mgmt(m) if m.ev == ProtocolEventKind::Commit => {
                    let decision = m.decision.0;
                    let delta: GraphDelta = serde_json::from_value(m.detail["delta"].clone())
                        .map_err(|source| VerdictError::BadDelta { decision, source })?;
                    graph = apply_delta(&graph, &delta).map_err(|source| VerdictError::Replay { decision, source })?;
                }
                _ => {}
            }
            next += 1;
        }
        let span = cfg.window.min(t);
        let lo = t - span;
        let count = sink_done.iter().filter(|x| **x > lo && **x <= t).count();
        let throughput = count as f64 / span;
        let satisfied = scenario
            .contracts
            .iter()
            .map(|c| (c.key().to_string(), satisfied(c, &graph, &pool, throughput)))
            .collect();
        let degree = graph.managed_farm().map_or(0, |f| f.degree());
        ticks.push(TickAudit { time: t, throughput, degree, satisfied });
    }

    let streak = ticks.iter().rev().take_while(|a| a.all_satisfied()).count();
    let converged = streak >= STABLE_TICKS;
    let last = ticks.last();
    let verdict = RunVerdict {
        converged,
        ticks_to_converge: converged.then(|| ticks.len() - streak + 1),
        final_throughput: last.map_or(0.0, |a| a.throughput),
        contracts_satisfied: last.map(|a| a.satisfied.clone()).unwrap_or_default(),
    };
    Ok(Audit { ticks, final_graph: graph, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_times_cover_the_run() {
        assert_eq!(tick_times(5.0, 20.0), vec![5.0, 10.0, 15.0, 20.0]);
        assert_eq!(tick_times(5.0, 22.0).len(), 4);
        assert_eq!(tick_times(0.1, 1.0).len(), 10);
    }
}
