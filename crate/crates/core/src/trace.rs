//! The merged run trace: workload events and protocol events in one
//! time-ordered JSON Lines stream.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::consensus::{DecisionId, ProtocolEvent, ProtocolEventKind};
use crate::sim::SimEvent;

/// A protocol record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgmtRecord {
    pub t: f64,
    pub ev: ProtocolEventKind,
    pub decision: DecisionId,
    pub by: String,
    pub detail: Value,
}

impl MgmtRecord {
    pub fn from_event(t: f64, e: ProtocolEvent) -> Self {
        MgmtRecord { t, ev: e.kind, decision: e.decision, by: e.by, detail: e.detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "src", rename_all = "lowercase")]
pub enum TraceRecord {
    Sim(SimEvent),
    Mgmt(MgmtRecord),
}

impl TraceRecord {
    pub fn t(&self) -> f64 {
        match self {
            TraceRecord::Sim(e) => e.t,
            TraceRecord::Mgmt(m) => m.t,
        }
    }

    pub fn mgmt(&self) -> Option<&MgmtRecord> {
        match self {
            TraceRecord::Mgmt(m) => Some(m),
            TraceRecord::Sim(_) => None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serialization")
    }
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {source}")]
pub struct TraceError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// Serializes records, one per line, each line newline-terminated.
pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses a JSON Lines trace; blank lines are skipped. Line numbers are
/// 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceError { line: i + 1, source }))
        .collect()
}

/// First 1-based line at which two traces differ, if any.
pub fn first_divergence(a: &str, b: &str) -> Option<usize> {
    let mut la = a.lines();
    let mut lb = b.lines();
    let mut n = 0;
    loop {
        n += 1;
        match (la.next(), lb.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(n),
            _ => {}
        }
    }
}
