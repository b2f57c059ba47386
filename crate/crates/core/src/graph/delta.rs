use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use super::{
    validate, ApplicationGraph, ArcId, ArcRecord, GraphError, MetaKey, MetaValue, MetadataSet, NodeId,
    NodeKind, NodeRecord, SkeletonPath, Target,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: NodeId,
    pub kind: NodeKind,
    pub path: SkeletonPath,
    pub meta: MetadataSet,
}

impl NodeEntry {
    fn from_graph(id: &NodeId, r: &NodeRecord) -> Self {
        NodeEntry { id: id.clone(), kind: r.kind, path: r.path.clone(), meta: r.meta.clone() }
    }

    fn record(&self) -> NodeRecord {
        NodeRecord { kind: self.kind, path: self.path.clone(), meta: self.meta.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcEntry {
    pub from: NodeId,
    pub to: NodeId,
    pub meta: MetadataSet,
}

impl ArcEntry {
    pub fn id(&self) -> ArcId {
        ArcId::new(self.from.clone(), self.to.clone())
    }
}

/// One metadata key changing on one target. `None` means absent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaChange {
    pub target: Target,
    pub key: MetaKey,
    pub old: Option<MetaValue>,
    pub new: Option<MetaValue>,
}

impl<'de> Deserialize<'de> for MetaChange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            target: Target,
            key: MetaKey,
            old: Option<serde_json::Value>,
            new: Option<serde_json::Value>,
        }
        let raw = Raw::deserialize(d)?;
        let decode = |v: Option<serde_json::Value>| match v {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(v) => raw.key.decode(v).map(Some).map_err(D::Error::custom),
        };
        let old = decode(raw.old)?;
        let new = decode(raw.new)?;
        Ok(MetaChange { target: raw.target, key: raw.key, old, new })
    }
}

/// A change between two graph versions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub base_version: u64,
    pub added_nodes: Vec<NodeEntry>,
    pub removed_nodes: Vec<NodeEntry>,
    pub added_arcs: Vec<ArcEntry>,
    pub removed_arcs: Vec<ArcEntry>,
    pub metadata_changes: Vec<MetaChange>,
}

impl GraphDelta {
    pub fn empty(base_version: u64) -> Self {
        GraphDelta { base_version, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_arcs.is_empty()
            && self.removed_arcs.is_empty()
            && self.metadata_changes.is_empty()
    }

    pub fn added_node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.added_nodes.iter().map(|n| &n.id)
    }
}

fn meta_changes(target: Target, old: &MetadataSet, new: &MetadataSet, out: &mut Vec<MetaChange>) {
    for (k, v) in old.iter() {
        match new.get(k) {
            Some(nv) if nv == v => {}
            nv => out.push(MetaChange {
                target: target.clone(),
                key: k.clone(),
                old: Some(v.clone()),
                new: nv.cloned(),
            }),
        }
    }
    for (k, v) in new.iter() {
        if old.get(k).is_none() {
            out.push(MetaChange { target: target.clone(), key: k.clone(), old: None, new: Some(v.clone()) });
        }
    }
}

/// Minimal delta taking `old` to `new`. Identity is by node id / arc endpoints;
/// a node whose kind or path changed is replaced rather than patched.
pub fn diff(old: &ApplicationGraph, new: &ApplicationGraph) -> GraphDelta {
    let mut d = GraphDelta::empty(old.version());
    for (id, r) in old.nodes() {
        match new.node(id) {
            Some(nr) if nr.kind == r.kind && nr.path == r.path => {
                meta_changes(Target::Node(id.clone()), &r.meta, &nr.meta, &mut d.metadata_changes);
            }
            Some(nr) => {
                d.removed_nodes.push(NodeEntry::from_graph(id, r));
                d.added_nodes.push(NodeEntry::from_graph(id, nr));
            }
            None => d.removed_nodes.push(NodeEntry::from_graph(id, r)),
        }
    }
    for (id, r) in new.nodes() {
        if old.node(id).is_none() {
            d.added_nodes.push(NodeEntry::from_graph(id, r));
        }
    }
    let replaced: Vec<&NodeId> = d
        .removed_nodes
        .iter()
        .filter(|n| new.node(&n.id).is_some())
        .map(|n| &n.id)
        .collect();
    let touches_replaced = |a: &ArcId| replaced.contains(&&a.from) || replaced.contains(&&a.to);
    for (a, r) in old.arcs() {
        match new.arc(a) {
            // arcs on a replaced node are dropped together with it and re-added
            Some(nr) if !touches_replaced(a) => {
                meta_changes(Target::Arc(a.clone()), &r.meta, &nr.meta, &mut d.metadata_changes)
            }
            _ => d.removed_arcs.push(ArcEntry { from: a.from.clone(), to: a.to.clone(), meta: r.meta.clone() }),
        }
    }
    for (a, r) in new.arcs() {
        if old.arc(a).is_none() || touches_replaced(a) {
            d.added_arcs.push(ArcEntry { from: a.from.clone(), to: a.to.clone(), meta: r.meta.clone() });
        }
    }
    d
}

/// Applies `delta` to `g`, returning the next version. The input is untouched.
pub fn apply_delta(g: &ApplicationGraph, delta: &GraphDelta) -> Result<ApplicationGraph, GraphError> {
    if delta.base_version != g.version() {
        return Err(GraphError::StaleDelta { delta: delta.base_version, graph: g.version() });
    }
    let mut next = g.clone();
    for a in &delta.removed_arcs {
        next.remove_arc(&a.id())
            .ok_or_else(|| GraphError::DeltaConflict(format!("removed arc {} not present", a.id())))?;
    }
    for n in &delta.removed_nodes {
        next.remove_node(&n.id)
            .ok_or_else(|| GraphError::DeltaConflict(format!("removed node {} not present", n.id)))?;
    }
    for n in &delta.added_nodes {
        if next.insert_node(n.id.clone(), n.record()).is_some() {
            return Err(GraphError::DeltaConflict(format!("added node {} already present", n.id)));
        }
    }
    for a in &delta.added_arcs {
        if next.insert_arc(a.id(), ArcRecord { meta: a.meta.clone() }).is_some() {
            return Err(GraphError::DeltaConflict(format!("added arc {} already present", a.id())));
        }
    }
    for c in &delta.metadata_changes {
        let meta = next
            .meta_mut(&c.target)
            .ok_or_else(|| GraphError::UnknownTarget(c.target.clone()))?;
        if meta.get(&c.key) != c.old.as_ref() {
            return Err(GraphError::DeltaConflict(format!(
                "{} on {}: expected {:?}, found {:?}",
                c.key,
                c.target,
                c.old,
                meta.get(&c.key)
            )));
        }
        match &c.new {
            Some(v) => {
                if !c.key.admits(v) {
                    return Err(GraphError::ValueTypeMismatch { key: c.key.clone(), value: v.clone() });
                }
                meta.set(c.key.clone(), v.clone());
            }
            None => {
                meta.remove(&c.key);
            }
        }
    }
    let report = validate(&next);
    if !report.is_well_formed() {
        return Err(GraphError::WouldMalform(report));
    }
    next.set_version(g.version() + 1);
    Ok(next)
}
