use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{ApplicationGraph, ArcId, ChannelKind, NodeId, NodeKind, SkeletonPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Lint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IssueKind {
    DanglingArc,
    SelfLoop,
    Disconnected,
    Cycle,
    FarmShape,
    MetadataPlacement,
    SslBetweenSecureNodes,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    /// No errors; lints are allowed.
    pub fn is_well_formed(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn lints(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Lint)
    }

    fn error(&mut self, kind: IssueKind, message: String) {
        self.issues.push(Issue { severity: Severity::Error, kind, message });
    }

    fn lint(&mut self, kind: IssueKind, message: String) {
        self.issues.push(Issue { severity: Severity::Lint, kind, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<&str> = self.issues.iter().map(|i| i.message.as_str()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Reports every violated structural invariant of `g`.
pub fn validate(g: &ApplicationGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    for a in g.arcs().keys() {
        if a.from == a.to {
            report.error(IssueKind::SelfLoop, format!("self-loop on {}", a.from));
        }
        for end in [&a.from, &a.to] {
            if g.node(end).is_none() {
                report.error(IssueKind::DanglingArc, format!("arc {a} references missing node {end}"));
            }
        }
    }

    check_metadata(g, &mut report);
    check_farms(g, &mut report);
    if report.errors().all(|i| i.kind != IssueKind::DanglingArc) {
        check_connected(g, &mut report);
        check_acyclic(g, &mut report);
    }
    report
}

fn check_metadata(g: &ApplicationGraph, report: &mut ValidationReport) {
    for (id, r) in g.nodes() {
        for (k, _) in r.meta.iter() {
            if !k.allowed_on_node() {
                report.error(IssueKind::MetadataPlacement, format!("{k} on node {id}"));
            }
        }
    }
    for (a, r) in g.arcs() {
        for (k, _) in r.meta.iter() {
            if !k.allowed_on_arc() {
                report.error(IssueKind::MetadataPlacement, format!("{k} on arc {a}"));
            }
        }
        if r.meta.channel_kind() == Some(ChannelKind::Ssl)
            && g.is_secure(&a.from) == Some(true)
            && g.is_secure(&a.to) == Some(true)
        {
            report.lint(IssueKind::SslBetweenSecureNodes, format!("arc {a} is Ssl between two secure nodes"));
        }
    }
}

#[derive(Default)]
struct FarmParts {
    emitters: Vec<NodeId>,
    collectors: Vec<NodeId>,
    workers: Vec<NodeId>,
}

fn check_farms(g: &ApplicationGraph, report: &mut ValidationReport) {
    let mut farms: BTreeMap<SkeletonPath, FarmParts> = BTreeMap::new();
    for (id, r) in g.nodes() {
        match r.kind {
            NodeKind::Emitter => farms.entry(r.path.clone()).or_default().emitters.push(id.clone()),
            NodeKind::Collector => farms.entry(r.path.clone()).or_default().collectors.push(id.clone()),
            NodeKind::Worker => match r.path.split_last() {
                Some((parent, _)) => farms.entry(parent).or_default().workers.push(id.clone()),
                None => report.error(IssueKind::FarmShape, format!("worker {id} has no enclosing farm")),
            },
            NodeKind::SeqStage => {}
        }
    }

    for (path, parts) in &farms {
        if parts.emitters.len() != 1 || parts.collectors.len() != 1 {
            report.error(
                IssueKind::FarmShape,
                format!(
                    "farm at {path} has {} emitters and {} collectors",
                    parts.emitters.len(),
                    parts.collectors.len()
                ),
            );
            continue;
        }
        if parts.workers.is_empty() {
            report.error(IssueKind::FarmShape, format!("farm at {path} has no workers"));
        }
        let e = &parts.emitters[0];
        let c = &parts.collectors[0];
        let workers: BTreeSet<&NodeId> = parts.workers.iter().collect();
        for w in &parts.workers {
            let ins: Vec<&ArcId> = g.in_arcs(w).collect();
            let outs: Vec<&ArcId> = g.out_arcs(w).collect();
            if ins.len() != 1 || ins[0].from != *e {
                report.error(IssueKind::FarmShape, format!("worker {w} is not fed by exactly its emitter {e}"));
            }
            if outs.len() != 1 || outs[0].to != *c {
                report.error(IssueKind::FarmShape, format!("worker {w} does not feed exactly its collector {c}"));
            }
        }
        for a in g.out_arcs(e) {
            if !workers.contains(&a.to) {
                report.error(IssueKind::FarmShape, format!("emitter {e} feeds non-worker {}", a.to));
            }
        }
        for a in g.in_arcs(c) {
            if !workers.contains(&a.from) {
                report.error(IssueKind::FarmShape, format!("collector {c} fed by non-worker {}", a.from));
            }
        }
    }
}

fn check_connected(g: &ApplicationGraph, report: &mut ValidationReport) {
    let Some(start) = g.nodes().keys().next() else { return };
    let mut adj: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    for a in g.arcs().keys() {
        adj.entry(&a.from).or_default().push(&a.to);
        adj.entry(&a.to).or_default().push(&a.from);
    }
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for m in adj.get(n).into_iter().flatten() {
            if seen.insert(*m) {
                queue.push_back(m);
            }
        }
    }
    if seen.len() != g.node_count() {
        report.error(
            IssueKind::Disconnected,
            format!("graph has {} nodes but only {} are connected to {start}", g.node_count(), seen.len()),
        );
    }
}

fn check_acyclic(g: &ApplicationGraph, report: &mut ValidationReport) {
    let mut indegree: BTreeMap<&NodeId, usize> = g.nodes().keys().map(|n| (n, 0)).collect();
    for a in g.arcs().keys() {
        *indegree.entry(&a.to).or_default() += 1;
    }
    let mut ready: VecDeque<&NodeId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut visited = 0;
    while let Some(n) = ready.pop_front() {
        visited += 1;
        for a in g.out_arcs(n) {
            let d = indegree.get_mut(&a.to).expect("arc endpoints checked");
            *d -= 1;
            if *d == 0 {
                ready.push_back(&a.to);
            }
        }
    }
    if visited != indegree.len() {
        report.error(IssueKind::Cycle, "graph contains a cycle".into());
    }
}
