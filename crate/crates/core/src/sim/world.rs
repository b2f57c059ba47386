use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::graph::{apply_delta, ApplicationGraph, ChannelKind, GraphDelta, NodeId, NodeKind, ResourceId, SkeletonExpr};
use crate::rules::Action;

use super::actions::{execute_action, ActionContext, ActionEffect, ActionError};
use super::{MonitorSnapshot, ResourcePool, SimConfig, SimError, SimEvent, SimEventKind, WorkloadPhase};

#[derive(Debug)]
enum EventKind {
    Arrival,
    Done { node: NodeId, token: u64 },
}

#[derive(Debug)]
struct Scheduled {
    t: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Clone, Copy, Debug)]
struct Task {
    id: u64,
    /// Set when a task is moved off a removed worker mid-service.
    remaining: Option<f64>,
}

#[derive(Debug)]
struct InService {
    task: Task,
    token: u64,
    start: f64,
    end: f64,
}

/// Single-server FIFO station.
#[derive(Debug, Default)]
struct Station {
    queue: VecDeque<Task>,
    busy: Option<InService>,
}

#[derive(Debug, Default)]
struct NodeLog {
    arrivals: Vec<f64>,
    completions: Vec<f64>,
    busy: Vec<(f64, f64)>,
    busy_since: Option<f64>,
}

#[derive(Debug, Default)]
struct ArrivalCursor {
    phase: usize,
    k: u64,
    last: f64,
}

/// Events in `(lo, hi]` of a sorted time log.
fn count_in(log: &[f64], lo: f64, hi: f64) -> usize {
    log.partition_point(|x| *x <= hi) - log.partition_point(|x| *x <= lo)
}

/// The simulated application: the installed graph plus every station,
/// queue and log.
#[derive(Debug)]
pub struct World {
    expr: SkeletonExpr,
    pool: ResourcePool,
    cfg: SimConfig,
    workload: Vec<WorkloadPhase>,
    graph: ApplicationGraph,
    now: f64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    rng: ChaCha8Rng,
    cursor: ArrivalCursor,
    stations: BTreeMap<NodeId, Station>,
    round_robin: BTreeMap<NodeId, usize>,
    logs: BTreeMap<NodeId, NodeLog>,
    events: Vec<SimEvent>,
    next_task: u64,
    injected: u64,
    completed: u64,
}

impl World {
    pub fn new(
        expr: SkeletonExpr,
        pool: ResourcePool,
        workload: Vec<WorkloadPhase>,
        cfg: SimConfig,
    ) -> Result<Self, SimError> {
        cfg.check()?;
        for p in &workload {
            if !(p.duration > 0.0) || !(p.rate >= 0.0) {
                return Err(SimError::InvalidConfig("workload phases need duration > 0 and rate >= 0".into()));
            }
        }
        let mut w = World {
            expr,
            pool,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            workload,
            graph: ApplicationGraph::empty(),
            now: 0.0,
            heap: BinaryHeap::new(),
            seq: 0,
            cursor: ArrivalCursor::default(),
            stations: BTreeMap::new(),
            round_robin: BTreeMap::new(),
            logs: BTreeMap::new(),
            events: Vec::new(),
            next_task: 0,
            injected: 0,
            completed: 0,
        };
        w.schedule_next_arrival();
        Ok(w)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn graph(&self) -> &ApplicationGraph {
        &self.graph
    }

    pub fn pool(&self) -> &ResourcePool {
        &self.pool
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn expr(&self) -> &SkeletonExpr {
        &self.expr
    }

    pub fn injected(&self) -> u64 {
        self.injected
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// Tasks queued or in service anywhere.
    pub fn in_flight(&self) -> u64 {
        self.stations.values().map(|s| s.queue.len() as u64 + u64::from(s.busy.is_some())).sum()
    }

    /// Drains the events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<SimEvent> {
        std::mem::take(&mut self.events)
    }

    fn push(&mut self, t: f64, kind: EventKind) -> u64 {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled { t, seq: self.seq, kind }));
        self.seq
    }

    fn phase_start(&self, phase: usize) -> f64 {
        self.workload[..phase].iter().map(|p| p.duration).sum()
    }

    fn schedule_next_arrival(&mut self) {
        while self.cursor.phase < self.workload.len() {
            let WorkloadPhase { duration, rate } = self.workload[self.cursor.phase];
            let start = self.phase_start(self.cursor.phase);
            let end = start + duration;
            if rate > 0.0 {
                let t = if self.cfg.jitter {
                    let from = if self.cursor.k == 0 { start } else { self.cursor.last };
                    from + Exp::new(rate).expect("positive rate").sample(&mut self.rng)
                } else {
                    start + self.cursor.k as f64 / rate
                };
                if t < end {
                    self.cursor.k += 1;
                    self.cursor.last = t;
                    self.push(t, EventKind::Arrival);
                    return;
                }
            }
            self.cursor.phase += 1;
            self.cursor.k = 0;
        }
    }

    fn emit(&mut self, ev: SimEventKind, node: &NodeId, task: u64) {
        self.events.push(SimEvent { t: self.now, ev, node: node.clone(), task });
    }

    /// Processes every event with time ≤ `until`, then sets the clock to `until`.
    pub fn step(&mut self, until: f64) -> Result<(), SimError> {
        while let Some(Reverse(next)) = self.heap.peek() {
            if next.t > until {
                break;
            }
            let Reverse(ev) = self.heap.pop().expect("peeked");
            self.now = ev.t;
            match ev.kind {
                EventKind::Arrival => {
                    let sources = self.graph.sources();
                    let [source] = sources.as_slice() else { return Err(SimError::NoSource) };
                    let source = source.clone();
                    let task = Task { id: self.next_task, remaining: None };
                    self.next_task += 1;
                    self.injected += 1;
                    self.schedule_next_arrival();
                    self.deliver(&source, task)?;
                }
                EventKind::Done { node, token } => self.finish(&node, token)?,
            }
        }
        self.now = self.now.max(until);
        Ok(())
    }

    fn deliver(&mut self, node: &NodeId, task: Task) -> Result<(), SimError> {
        self.emit(SimEventKind::Arrive, node, task.id);
        self.logs.entry(node.clone()).or_default().arrivals.push(self.now);
        let kind = self.graph.node(node).map(|r| r.kind).ok_or_else(|| SimError::UnplacedNode(node.clone()))?;
        match kind {
            NodeKind::Emitter => self.dispatch(node, task),
            NodeKind::Collector => {
                self.emit(SimEventKind::Complete, node, task.id);
                self.logs.entry(node.clone()).or_default().completions.push(self.now);
                self.forward(node, task.id)
            }
            NodeKind::SeqStage | NodeKind::Worker => {
                self.stations.entry(node.clone()).or_default().queue.push_back(task);
                self.try_start(node)
            }
        }
    }

    /// Round-robin over the emitter's workers in replica order.
    fn dispatch(&mut self, emitter: &NodeId, task: Task) -> Result<(), SimError> {
        let mut workers: Vec<(u32, NodeId)> = self
            .graph
            .out_arcs(emitter)
            .filter_map(|a| {
                let idx = self.graph.node(&a.to)?.path.split_last()?.1;
                Some((idx, a.to.clone()))
            })
            .collect();
        workers.sort();
        if workers.is_empty() {
            return Err(SimError::InvalidConfig(format!("emitter {emitter} has no workers")));
        }
        let slot = self.round_robin.entry(emitter.clone()).or_default();
        let target = workers[*slot % workers.len()].1.clone();
        *slot = (*slot + 1) % workers.len();
        self.emit(SimEventKind::Dispatch, &target, task.id);
        self.deliver(&target, task)
    }

    fn forward(&mut self, node: &NodeId, task: u64) -> Result<(), SimError> {
        let next: Vec<NodeId> = self.graph.out_arcs(node).map(|a| a.to.clone()).collect();
        match next.as_slice() {
            [] => {
                self.completed += 1;
                Ok(())
            }
            [to] => self.deliver(to, Task { id: task, remaining: None }),
            _ => Err(SimError::InvalidConfig(format!("{node} fans out without being an emitter"))),
        }
    }

    fn service_time(&self, node: &NodeId) -> Result<f64, SimError> {
        let rec = self.graph.node(node).ok_or_else(|| SimError::UnplacedNode(node.clone()))?;
        let base = self
            .expr
            .service_at(&rec.path)
            .ok_or_else(|| SimError::InvalidConfig(format!("no service time for {node}")))?;
        let loc = rec.meta.location().ok_or_else(|| SimError::UnplacedNode(node.clone()))?;
        let res = self
            .pool
            .get(loc)
            .ok_or_else(|| SimError::UnknownResource { node: node.clone(), resource: loc.clone() })?;
        let ssl = self
            .graph
            .in_arcs(node)
            .chain(self.graph.out_arcs(node))
            .any(|a| self.graph.arc(a).and_then(|r| r.meta.channel_kind()) == Some(ChannelKind::Ssl));
        let overhead = if ssl { self.cfg.ssl_overhead } else { 1.0 };
        Ok(base / res.speed * overhead)
    }

    fn try_start(&mut self, node: &NodeId) -> Result<(), SimError> {
        let station = self.stations.get_mut(node).expect("station exists");
        if station.busy.is_some() {
            return Ok(());
        }
        let Some(task) = station.queue.pop_front() else { return Ok(()) };
        let duration = match task.remaining {
            Some(r) => r,
            None => self.service_time(node)?,
        };
        let end = self.now + duration;
        let token = self.seq + 1;
        self.push(end, EventKind::Done { node: node.clone(), token });
        self.stations.get_mut(node).expect("station exists").busy =
            Some(InService { task, token, start: self.now, end });
        self.logs.entry(node.clone()).or_default().busy_since = Some(self.now);
        self.emit(SimEventKind::Start, node, task.id);
        Ok(())
    }

    fn finish(&mut self, node: &NodeId, token: u64) -> Result<(), SimError> {
        let Some(station) = self.stations.get_mut(node) else { return Ok(()) };
        match &station.busy {
            Some(s) if s.token == token => {}
            _ => return Ok(()),
        }
        let done = station.busy.take().expect("matched");
        let log = self.logs.entry(node.clone()).or_default();
        log.completions.push(self.now);
        log.busy.push((done.start, self.now));
        log.busy_since = None;
        self.emit(SimEventKind::Complete, node, done.task.id);
        self.forward(node, done.task.id)?;
        self.try_start(node)
    }

    /// Checks placement: every node located on a known resource, no resource
    /// shared.
    fn check_placement(&self, g: &ApplicationGraph) -> Result<(), SimError> {
        let mut hosts: BTreeMap<&ResourceId, &NodeId> = BTreeMap::new();
        for (id, rec) in g.nodes() {
            let loc = rec.meta.location().ok_or_else(|| SimError::UnplacedNode(id.clone()))?;
            if self.pool.get(loc).is_none() {
                return Err(SimError::UnknownResource { node: id.clone(), resource: loc.clone() });
            }
            if let Some(first) = hosts.insert(loc, id) {
                return Err(SimError::SharedResource {
                    resource: loc.clone(),
                    first: first.clone(),
                    second: id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Makes a committed delta live. Tasks held by a removed worker are
    /// re-dispatched through its emitter, the one in service keeping its
    /// remaining service time.
    pub fn install(&mut self, delta: &GraphDelta) -> Result<(), SimError> {
        let next = apply_delta(&self.graph, delta)?;
        self.check_placement(&next)?;

        let mut orphans: Vec<(NodeId, Task)> = Vec::new();
        for entry in &delta.removed_nodes {
            let Some(station) = self.stations.remove(&entry.id) else { continue };
            let mut held: Vec<Task> = Vec::new();
            if let Some(s) = station.busy {
                let log = self.logs.entry(entry.id.clone()).or_default();
                log.busy.push((s.start, self.now));
                log.busy_since = None;
                held.push(Task { id: s.task.id, remaining: Some((s.end - self.now).max(0.0)) });
            }
            held.extend(station.queue);
            if held.is_empty() {
                continue;
            }
            let emitter = match (entry.kind, entry.path.split_last()) {
                (NodeKind::Worker, Some((farm, _))) => next
                    .farms()
                    .into_iter()
                    .find(|f| f.path == farm)
                    .map(|f| f.emitter)
                    .ok_or_else(|| SimError::UnsupportedRemoval(entry.id.clone()))?,
                _ => return Err(SimError::UnsupportedRemoval(entry.id.clone())),
            };
            orphans.extend(held.into_iter().map(|t| (emitter.clone(), t)));
        }

        self.graph = next;
        for (id, rec) in self.graph.nodes() {
            if matches!(rec.kind, NodeKind::SeqStage | NodeKind::Worker) && !self.stations.contains_key(id) {
                self.stations.insert(id.clone(), Station::default());
            }
        }
        for (emitter, task) in orphans {
            self.dispatch(&emitter, task)?;
        }
        Ok(())
    }

    /// Runs `plan` on a copy of `current` without touching the live world.
    pub fn stage_plan(
        &self,
        current: &ApplicationGraph,
        plan: &[Action],
        preferred: Option<ResourceId>,
        power_active: bool,
    ) -> Result<StagedPlan, ActionError> {
        let utilization = self.monitor(self.now).utilization;
        let mut ctx = ActionContext::new(&self.pool, power_active, &utilization);
        ctx.preferred = preferred;
        let mut graph = current.clone();
        let mut effects = Vec::with_capacity(plan.len());
        for a in plan {
            effects.push(execute_action(&mut graph, a, &mut ctx)?);
        }
        Ok(StagedPlan { graph, recruited: ctx.recruited, effects })
    }

    /// Monitored values over `(now - window, now]`, the window shortened to
    /// the elapsed time early in the run.
    pub fn monitor(&self, now: f64) -> MonitorSnapshot {
        let span = self.cfg.window.min(now);
        let lo = now - span;
        let count = |node: &NodeId, pick: fn(&NodeLog) -> &Vec<f64>| {
            self.logs.get(node).map_or(0, |l| count_in(pick(l), lo, now))
        };
        let rate = |n: usize| if span > 0.0 { n as f64 / span } else { 0.0 };

        let farm = self.graph.managed_farm();
        let (t_arr, throughput, degree) = match &farm {
            Some(f) => {
                let n = count(&f.emitter, |l| &l.arrivals);
                let t_arr = (n > 0 && span > 0.0).then(|| span / n as f64);
                (t_arr, rate(count(&f.collector, |l| &l.completions)), f.degree())
            }
            None => (None, 0.0, 0),
        };
        let sink_throughput = rate(self.graph.sinks().iter().map(|s| count(s, |l| &l.completions)).sum());

        let mut utilization = BTreeMap::new();
        for (id, rec) in self.graph.nodes() {
            if !matches!(rec.kind, NodeKind::SeqStage | NodeKind::Worker) {
                continue;
            }
            let busy = self.logs.get(id).map_or(0.0, |l| {
                let closed: f64 = l.busy.iter().map(|(s, e)| (e.min(now) - s.max(lo)).max(0.0)).sum();
                let open = l.busy_since.map_or(0.0, |s| (now - s.max(lo)).max(0.0));
                closed + open
            });
            utilization.insert(id.clone(), if span > 0.0 { busy / span } else { 0.0 });
        }
        MonitorSnapshot { time: now, window: self.cfg.window, t_arr, throughput, sink_throughput, degree, utilization }
    }

    /// Completion times logged at `node`.
    pub fn completions(&self, node: &NodeId) -> &[f64] {
        self.logs.get(node).map_or(&[], |l| l.completions.as_slice())
    }

    /// Sum of `powerCost` over the resources hosting a node of `g`.
    pub fn power_committed(&self, g: &ApplicationGraph) -> f64 {
        power_committed(g, &self.pool)
    }
}

pub fn power_committed(g: &ApplicationGraph, pool: &ResourcePool) -> f64 {
    let used: BTreeSet<&ResourceId> = g.nodes().values().filter_map(|n| n.meta.location()).collect();
    used.into_iter().filter_map(|r| pool.get(r)).map(|r| r.power_cost).sum()
}

/// Output of [`World::stage_plan`].
#[derive(Clone, Debug)]
pub struct StagedPlan {
    pub graph: ApplicationGraph,
    pub recruited: Option<ResourceId>,
    pub effects: Vec<ActionEffect>,
}
