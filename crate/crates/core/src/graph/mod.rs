//! Skeleton compositions and the shared application graph.
//!
//! Graphs are immutable values: every mutation returns a new graph with the
//! version counter bumped by one, so a proposer can hold the current graph and
//! a proposed one side by side.

mod delta;
mod metadata;
mod skeleton;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use delta::{apply_delta, diff, ArcEntry, GraphDelta, MetaChange, NodeEntry};
pub use metadata::{
    ChannelKind, MetaKey, MetaValue, MetadataSet, PowerClass, ResourceId, Target, UnknownKey,
};
pub use skeleton::{expand, Degree, ExpandConfig, SkeletonExpr, SkeletonPath};
pub(crate) use skeleton::{farm_tag, worker_id};
pub use validate::{validate, Issue, IssueKind, Severity, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("malformed skeleton: {0}")]
    MalformedSkeleton(String),
    #[error("stale delta: based on version {delta} but graph is at {graph}")]
    StaleDelta { delta: u64, graph: u64 },
    #[error("delta would leave the graph malformed: {0}")]
    WouldMalform(ValidationReport),
    #[error("delta does not match the graph: {0}")]
    DeltaConflict(String),
    #[error("unknown target {0}")]
    UnknownTarget(Target),
    #[error("key `{key}` cannot be placed on {target}")]
    KeyClassMismatch { key: MetaKey, target: Target },
    #[error("value {value:?} has the wrong type for key `{key}`")]
    ValueTypeMismatch { key: MetaKey, value: MetaValue },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArcId {
    pub from: NodeId,
    pub to: NodeId,
}

impl ArcId {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        ArcId { from: from.into(), to: to.into() }
    }
}

impl fmt::Display for ArcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.from, self.to)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    SeqStage,
    Emitter,
    Worker,
    Collector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub kind: NodeKind,
    pub path: SkeletonPath,
    pub meta: MetadataSet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub meta: MetadataSet,
}

/// One farm instance as it appears in a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FarmRef {
    pub path: SkeletonPath,
    pub emitter: NodeId,
    pub collector: NodeId,
    /// Workers ordered by replica index.
    pub workers: Vec<NodeId>,
}

impl FarmRef {
    pub fn degree(&self) -> usize {
        self.workers.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApplicationGraph {
    nodes: BTreeMap<NodeId, NodeRecord>,
    arcs: BTreeMap<ArcId, ArcRecord>,
    version: u64,
}

impl ApplicationGraph {
    /// The empty graph at version 0.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeRecord> {
        &self.nodes
    }

    pub fn arcs(&self) -> &BTreeMap<ArcId, ArcRecord> {
        &self.arcs
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn arc(&self, id: &ArcId) -> Option<&ArcRecord> {
        self.arcs.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    /// Structural equality ignoring the version counter.
    pub fn content_eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.arcs == other.arcs
    }

    pub fn out_arcs<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a ArcId> + 'a {
        self.arcs.keys().filter(move |a| &a.from == id)
    }

    pub fn in_arcs<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a ArcId> + 'a {
        self.arcs.keys().filter(move |a| &a.to == id)
    }

    pub fn metadata(&self, target: &Target) -> Option<&MetadataSet> {
        match target {
            Target::Node(n) => self.nodes.get(n).map(|r| &r.meta),
            Target::Arc(a) => self.arcs.get(a).map(|r| &r.meta),
        }
    }

    /// Sets one metadata entry, returning a new graph with the version bumped.
    pub fn annotate(
        &self,
        target: &Target,
        key: MetaKey,
        value: MetaValue,
    ) -> Result<Self, GraphError> {
        let mut next = self.clone();
        next.set_meta(target, key, value)?;
        next.version += 1;
        Ok(next)
    }

    pub(crate) fn set_meta(
        &mut self,
        target: &Target,
        key: MetaKey,
        value: MetaValue,
    ) -> Result<Option<MetaValue>, GraphError> {
        if !key.admits(&value) {
            return Err(GraphError::ValueTypeMismatch { key, value });
        }
        let (meta, admissible) = match target {
            Target::Node(n) => (self.nodes.get_mut(n).map(|r| &mut r.meta), key.allowed_on_node()),
            Target::Arc(a) => (self.arcs.get_mut(a).map(|r| &mut r.meta), key.allowed_on_arc()),
        };
        let meta = meta.ok_or_else(|| GraphError::UnknownTarget(target.clone()))?;
        if !admissible {
            return Err(GraphError::KeyClassMismatch { key, target: target.clone() });
        }
        Ok(meta.set(key, value))
    }

    pub(crate) fn insert_node(&mut self, id: NodeId, record: NodeRecord) -> Option<NodeRecord> {
        self.nodes.insert(id, record)
    }

    pub(crate) fn insert_arc(&mut self, id: ArcId, record: ArcRecord) -> Option<ArcRecord> {
        self.arcs.insert(id, record)
    }

    /// Removes a node together with every arc touching it.
    pub(crate) fn remove_node(&mut self, id: &NodeId) -> Option<NodeRecord> {
        self.arcs.retain(|a, _| &a.from != id && &a.to != id);
        self.nodes.remove(id)
    }

    pub(crate) fn remove_arc(&mut self, id: &ArcId) -> Option<ArcRecord> {
        self.arcs.remove(id)
    }

    pub(crate) fn meta_mut(&mut self, target: &Target) -> Option<&mut MetadataSet> {
        match target {
            Target::Node(n) => self.nodes.get_mut(n).map(|r| &mut r.meta),
            Target::Arc(a) => self.arcs.get_mut(a).map(|r| &mut r.meta),
        }
    }

    pub(crate) fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    /// All farm instances, ordered by skeleton path.
    pub fn farms(&self) -> Vec<FarmRef> {
        let mut farms: BTreeMap<SkeletonPath, (Option<NodeId>, Option<NodeId>, Vec<(u32, NodeId)>)> =
            BTreeMap::new();
        for (id, rec) in &self.nodes {
            match rec.kind {
                NodeKind::Emitter => farms.entry(rec.path.clone()).or_default().0 = Some(id.clone()),
                NodeKind::Collector => farms.entry(rec.path.clone()).or_default().1 = Some(id.clone()),
                NodeKind::Worker => {
                    if let Some((parent, idx)) = rec.path.split_last() {
                        farms.entry(parent).or_default().2.push((idx, id.clone()));
                    }
                }
                NodeKind::SeqStage => {}
            }
        }
        farms
            .into_iter()
            .filter_map(|(path, (e, c, mut ws))| {
                ws.sort();
                Some(FarmRef {
                    path,
                    emitter: e?,
                    collector: c?,
                    workers: ws.into_iter().map(|(_, id)| id).collect(),
                })
            })
            .collect()
    }

    /// The first farm in skeleton order; the elastic one under management.
    pub fn managed_farm(&self) -> Option<FarmRef> {
        self.farms().into_iter().next()
    }

    /// Nodes without incoming arcs.
    pub fn sources(&self) -> Vec<NodeId> {
        self.nodes
            .keys()
            .filter(|n| !self.arcs.keys().any(|a| &a.to == *n))
            .cloned()
            .collect()
    }

    /// Nodes without outgoing arcs.
    pub fn sinks(&self) -> Vec<NodeId> {
        self.nodes
            .keys()
            .filter(|n| !self.arcs.keys().any(|a| &a.from == *n))
            .cloned()
            .collect()
    }

    /// A node counts as secure when its metadata says so explicitly.
    pub fn is_secure(&self, id: &NodeId) -> Option<bool> {
        self.nodes.get(id).and_then(|r| r.meta.secure())
    }

    pub fn ssl_arc_count(&self) -> usize {
        self.arcs
            .values()
            .filter(|a| a.meta.channel_kind() == Some(ChannelKind::Ssl))
            .count()
    }

    /// JSON snapshot: `{"version", "nodes": [{"id","kind","meta"}], "arcs": [{"from","to","meta"}]}`.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(Snapshot::from(self)).expect("snapshot serialization")
    }

    pub fn snapshot_string(&self) -> String {
        serde_json::to_string(&Snapshot::from(self)).expect("snapshot serialization")
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    version: u64,
    nodes: Vec<SnapshotNode<'a>>,
    arcs: Vec<SnapshotArc<'a>>,
}

#[derive(Serialize)]
struct SnapshotNode<'a> {
    id: &'a NodeId,
    kind: NodeKind,
    meta: &'a MetadataSet,
}

#[derive(Serialize)]
struct SnapshotArc<'a> {
    from: &'a NodeId,
    to: &'a NodeId,
    meta: &'a MetadataSet,
}

impl<'a> From<&'a ApplicationGraph> for Snapshot<'a> {
    fn from(g: &'a ApplicationGraph) -> Self {
        Snapshot {
            version: g.version,
            nodes: g
                .nodes
                .iter()
                .map(|(id, r)| SnapshotNode { id, kind: r.kind, meta: &r.meta })
                .collect(),
            arcs: g
                .arcs
                .iter()
                .map(|(a, r)| SnapshotArc { from: &a.from, to: &a.to, meta: &r.meta })
                .collect(),
        }
    }
}
