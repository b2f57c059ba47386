use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ApplicationGraph, ArcId, ArcRecord, GraphError, MetadataSet, NodeId, NodeKind, NodeRecord};

/// Position of a node inside the skeleton tree: pipeline stage indices
/// (0-based) followed, for farm workers, by the replica index (1-based).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkeletonPath(pub Vec<u32>);

impl SkeletonPath {
    pub fn root() -> Self {
        SkeletonPath(Vec::new())
    }

    pub fn child(&self, idx: u32) -> Self {
        let mut v = self.0.clone();
        v.push(idx);
        SkeletonPath(v)
    }

    pub fn split_last(&self) -> Option<(SkeletonPath, u32)> {
        let (last, rest) = self.0.split_last()?;
        Some((SkeletonPath(rest.to_vec()), *last))
    }
}

impl fmt::Display for SkeletonPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "/{}", parts.join("/"))
    }
}

/// Farm parallelism degree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DegreeRepr", into = "DegreeRepr")]
pub enum Degree {
    #[default]
    Default,
    Explicit(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DegreeRepr {
    Number(u32),
    Word(String),
}

impl TryFrom<DegreeRepr> for Degree {
    type Error = String;

    fn try_from(r: DegreeRepr) -> Result<Self, Self::Error> {
        match r {
            DegreeRepr::Number(n) => Ok(Degree::Explicit(n)),
            DegreeRepr::Word(w) if w == "default" => Ok(Degree::Default),
            DegreeRepr::Word(w) => Err(format!("degree must be a number or \"default\", got {w:?}")),
        }
    }
}

impl From<Degree> for DegreeRepr {
    fn from(d: Degree) -> Self {
        match d {
            Degree::Default => DegreeRepr::Word("default".into()),
            Degree::Explicit(n) => DegreeRepr::Number(n),
        }
    }
}

/// The functional structure of the application.
///
/// JSON form: `{"seq": {"label": "s1", "service": 1.0}}`,
/// `{"pipeline": [..stages..]}`, `{"farm": {"worker": {..}, "degree": 4}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SkeletonExpr {
    Seq {
        label: String,
        /// Seconds per task on a resource of speed 1.
        service: f64,
    },
    Pipeline(Vec<SkeletonExpr>),
    Farm {
        worker: Box<SkeletonExpr>,
        #[serde(default)]
        degree: Degree,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandConfig {
    pub default_degree: u32,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig { default_degree: 4 }
    }
}

impl SkeletonExpr {
    pub fn seq(label: impl Into<String>, service: f64) -> Self {
        SkeletonExpr::Seq { label: label.into(), service }
    }

    pub fn pipeline(stages: Vec<SkeletonExpr>) -> Self {
        SkeletonExpr::Pipeline(stages)
    }

    pub fn farm(worker: SkeletonExpr, degree: Degree) -> Self {
        SkeletonExpr::Farm { worker: Box::new(worker), degree }
    }

    /// Checks the structural invariants without expanding.
    pub fn check(&self) -> Result<(), GraphError> {
        let mut labels = BTreeSet::new();
        self.check_inner(&mut labels)
    }

    fn check_inner(&self, labels: &mut BTreeSet<String>) -> Result<(), GraphError> {
        match self {
            SkeletonExpr::Seq { label, service } => {
                if label.is_empty() {
                    return Err(GraphError::MalformedSkeleton("empty stage label".into()));
                }
                if !(service.is_finite() && *service > 0.0) {
                    return Err(GraphError::MalformedSkeleton(format!(
                        "stage {label} has non-positive service time {service}"
                    )));
                }
                if !labels.insert(label.clone()) {
                    return Err(GraphError::MalformedSkeleton(format!("duplicate stage label {label}")));
                }
                Ok(())
            }
            SkeletonExpr::Pipeline(stages) => {
                if stages.len() < 2 {
                    return Err(GraphError::MalformedSkeleton(format!(
                        "pipeline needs at least 2 stages, got {}",
                        stages.len()
                    )));
                }
                stages.iter().try_for_each(|s| s.check_inner(labels))
            }
            SkeletonExpr::Farm { worker, degree } => {
                if *degree == Degree::Explicit(0) {
                    return Err(GraphError::MalformedSkeleton("farm degree 0".into()));
                }
                match worker.as_ref() {
                    SkeletonExpr::Seq { .. } => worker.check_inner(labels),
                    _ => Err(GraphError::MalformedSkeleton(
                        "farm workers must be sequential stages".into(),
                    )),
                }
            }
        }
    }

    /// Base service time of the node at `path`: a sequential stage, or a
    /// worker replica of a farm.
    pub fn service_at(&self, path: &SkeletonPath) -> Option<f64> {
        let mut expr = self;
        let mut steps = path.0.iter();
        loop {
            match expr {
                SkeletonExpr::Seq { service, .. } => {
                    return steps.next().is_none().then_some(*service);
                }
                SkeletonExpr::Pipeline(stages) => {
                    expr = stages.get(*steps.next()? as usize)?;
                }
                SkeletonExpr::Farm { worker, .. } => {
                    steps.next()?;
                    expr = worker;
                }
            }
        }
    }

    /// Number of graph nodes the expression expands into.
    pub fn node_count(&self, cfg: &ExpandConfig) -> usize {
        match self {
            SkeletonExpr::Seq { .. } => 1,
            SkeletonExpr::Pipeline(stages) => stages.iter().map(|s| s.node_count(cfg)).sum(),
            SkeletonExpr::Farm { worker, degree } => {
                2 + worker.node_count(cfg) * degree.resolve(cfg) as usize
            }
        }
    }

    /// The first farm in pre-order, with its path.
    pub fn first_farm(&self) -> Option<(SkeletonPath, &SkeletonExpr)> {
        fn walk<'a>(e: &'a SkeletonExpr, path: SkeletonPath) -> Option<(SkeletonPath, &'a SkeletonExpr)> {
            match e {
                SkeletonExpr::Seq { .. } => None,
                SkeletonExpr::Farm { .. } => Some((path, e)),
                SkeletonExpr::Pipeline(stages) => stages
                    .iter()
                    .enumerate()
                    .find_map(|(i, s)| walk(s, path.child(i as u32))),
            }
        }
        walk(self, SkeletonPath::root())
    }

    /// Replaces the degree of every farm.
    pub fn with_farm_degree(&self, degree: u32) -> SkeletonExpr {
        match self {
            SkeletonExpr::Seq { .. } => self.clone(),
            SkeletonExpr::Pipeline(stages) => {
                SkeletonExpr::Pipeline(stages.iter().map(|s| s.with_farm_degree(degree)).collect())
            }
            SkeletonExpr::Farm { worker, .. } => SkeletonExpr::Farm {
                worker: worker.clone(),
                degree: Degree::Explicit(degree),
            },
        }
    }
}

impl Degree {
    pub fn resolve(self, cfg: &ExpandConfig) -> u32 {
        match self {
            Degree::Default => cfg.default_degree,
            Degree::Explicit(n) => n,
        }
    }
}

/// Canonical id of a farm worker. The first farm uses the bare `n_w{i}` form.
pub(crate) fn worker_id(farm_tag: &str, replica: u32) -> NodeId {
    if farm_tag.is_empty() {
        NodeId(format!("n_w{replica}"))
    } else {
        NodeId(format!("n_w{farm_tag}_{replica}"))
    }
}

/// Recovers the farm tag from its emitter id (`n_e` → "", `n_e_2` → "_2").
pub(crate) fn farm_tag(emitter: &NodeId) -> &str {
    emitter.as_str().strip_prefix("n_e").unwrap_or("")
}

struct Builder<'c> {
    graph: ApplicationGraph,
    cfg: &'c ExpandConfig,
    farms_seen: u32,
}

impl Builder<'_> {
    fn add_node(&mut self, id: NodeId, kind: NodeKind, path: SkeletonPath) -> Result<NodeId, GraphError> {
        let record = NodeRecord { kind, path, meta: MetadataSet::new() };
        if self.graph.insert_node(id.clone(), record).is_some() {
            return Err(GraphError::MalformedSkeleton(format!("node id {id} generated twice")));
        }
        Ok(id)
    }

    fn link(&mut self, from: &NodeId, to: &NodeId) {
        self.graph.insert_arc(ArcId::new(from.clone(), to.clone()), ArcRecord::default());
    }

    /// Expands `expr` at `path`, returning its entry and exit boundary nodes.
    fn build(&mut self, expr: &SkeletonExpr, path: SkeletonPath) -> Result<(NodeId, NodeId), GraphError> {
        match expr {
            SkeletonExpr::Seq { label, .. } => {
                let id = self.add_node(NodeId(format!("n_{label}")), NodeKind::SeqStage, path)?;
                Ok((id.clone(), id))
            }
            SkeletonExpr::Pipeline(stages) => {
                let mut bounds: Option<(NodeId, NodeId)> = None;
                for (i, stage) in stages.iter().enumerate() {
                    let (entry, exit) = self.build(stage, path.child(i as u32))?;
                    bounds = Some(match bounds {
                        None => (entry, exit),
                        Some((first, prev_exit)) => {
                            self.link(&prev_exit, &entry);
                            (first, exit)
                        }
                    });
                }
                bounds.ok_or_else(|| GraphError::MalformedSkeleton("empty pipeline".into()))
            }
            SkeletonExpr::Farm { degree, .. } => {
                self.farms_seen += 1;
                let tag = if self.farms_seen == 1 { String::new() } else { format!("_{}", self.farms_seen) };
                let emitter = self.add_node(NodeId(format!("n_e{tag}")), NodeKind::Emitter, path.clone())?;
                let collector =
                    self.add_node(NodeId(format!("n_c{tag}")), NodeKind::Collector, path.clone())?;
                for i in 1..=degree.resolve(self.cfg) {
                    let w = self.add_node(worker_id(&tag, i), NodeKind::Worker, path.child(i))?;
                    self.link(&emitter, &w);
                    self.link(&w, &collector);
                }
                Ok((emitter, collector))
            }
        }
    }
}

/// Expands a skeleton expression into its application graph (version 0, no
/// metadata). Node ids are a deterministic function of the expression.
pub fn expand(expr: &SkeletonExpr, cfg: &ExpandConfig) -> Result<ApplicationGraph, GraphError> {
    expr.check()?;
    if cfg.default_degree == 0 {
        return Err(GraphError::MalformedSkeleton("default farm degree 0".into()));
    }
    let mut b = Builder { graph: ApplicationGraph::empty(), cfg, farms_seen: 0 };
    b.build(expr, SkeletonPath::root())?;
    Ok(b.graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(g: &ApplicationGraph) -> Vec<&str> {
        g.nodes().keys().map(|n| n.as_str()).collect()
    }

    #[test]
    fn section4_pipeline_expands_to_eight_nodes_ten_arcs() {
        let expr = SkeletonExpr::pipeline(vec![
            SkeletonExpr::seq("s1", 1.0),
            SkeletonExpr::farm(SkeletonExpr::seq("w", 4.0), Degree::Default),
            SkeletonExpr::seq("s3", 0.5),
        ]);
        let g = expand(&expr, &ExpandConfig { default_degree: 4 }).unwrap();
        let mut got = ids(&g);
        got.sort();
        assert_eq!(got, vec!["n_c", "n_e", "n_s1", "n_s3", "n_w1", "n_w2", "n_w3", "n_w4"]);
        assert_eq!(g.arc_count(), 10);
        let mut expected = vec![ArcId::new("n_s1", "n_e"), ArcId::new("n_c", "n_s3")];
        for i in 1..=4 {
            expected.push(ArcId::new("n_e", format!("n_w{i}").as_str()));
            expected.push(ArcId::new(format!("n_w{i}").as_str(), "n_c"));
        }
        for a in expected {
            assert!(g.arc(&a).is_some(), "missing {a}");
        }
        assert_eq!(g.node(&"n_w3".into()).unwrap().path, SkeletonPath(vec![1, 3]));
    }

    #[test]
    fn degenerate_and_minimal_shapes() {
        let g = expand(&SkeletonExpr::seq("s", 1.0), &ExpandConfig::default()).unwrap();
        assert_eq!((g.node_count(), g.arc_count()), (1, 0));
        let g = expand(
            &SkeletonExpr::farm(SkeletonExpr::seq("w", 1.0), Degree::Explicit(1)),
            &ExpandConfig::default(),
        )
        .unwrap();
        assert_eq!((g.node_count(), g.arc_count()), (3, 2));
    }

    #[test]
    fn malformed_expressions_rejected() {
        let cfg = ExpandConfig::default();
        let zero = SkeletonExpr::farm(SkeletonExpr::seq("w", 1.0), Degree::Explicit(0));
        assert!(matches!(expand(&zero, &cfg), Err(GraphError::MalformedSkeleton(_))));
        let empty = SkeletonExpr::pipeline(vec![]);
        assert!(matches!(expand(&empty, &cfg), Err(GraphError::MalformedSkeleton(_))));
        let single = SkeletonExpr::pipeline(vec![SkeletonExpr::seq("a", 1.0)]);
        assert!(expand(&single, &cfg).is_err());
        let dup = SkeletonExpr::pipeline(vec![SkeletonExpr::seq("a", 1.0), SkeletonExpr::seq("a", 1.0)]);
        assert!(expand(&dup, &cfg).is_err());
        let nested = SkeletonExpr::farm(
            SkeletonExpr::farm(SkeletonExpr::seq("w", 1.0), Degree::Default),
            Degree::Default,
        );
        assert!(expand(&nested, &cfg).is_err());
    }

    #[test]
    fn second_farm_gets_tagged_ids() {
        let expr = SkeletonExpr::pipeline(vec![
            SkeletonExpr::farm(SkeletonExpr::seq("a", 1.0), Degree::Explicit(2)),
            SkeletonExpr::farm(SkeletonExpr::seq("b", 1.0), Degree::Explicit(2)),
        ]);
        let g = expand(&expr, &ExpandConfig::default()).unwrap();
        assert!(g.node(&"n_e_2".into()).is_some());
        assert!(g.node(&"n_w_2_1".into()).is_some());
        assert!(g.arc(&ArcId::new("n_c", "n_e_2")).is_some());
        assert_eq!(g.farms().len(), 2);
        assert_eq!(farm_tag(&"n_e_2".into()), "_2");
    }

    #[test]
    fn service_lookup_by_path() {
        let expr = SkeletonExpr::pipeline(vec![
            SkeletonExpr::seq("s1", 1.0),
            SkeletonExpr::farm(SkeletonExpr::seq("w", 4.0), Degree::Default),
        ]);
        assert_eq!(expr.service_at(&SkeletonPath(vec![0])), Some(1.0));
        assert_eq!(expr.service_at(&SkeletonPath(vec![1, 7])), Some(4.0));
        assert_eq!(expr.service_at(&SkeletonPath(vec![1])), None);
        assert_eq!(expr.service_at(&SkeletonPath(vec![5])), None);
    }

    #[test]
    fn json_form() {
        let json = r#"{"pipeline":[{"seq":{"label":"s1","service":1.0}},
            {"farm":{"worker":{"seq":{"label":"w","service":4.0}},"degree":"default"}},
            {"seq":{"label":"s3","service":0.5}}]}"#;
        let expr: SkeletonExpr = serde_json::from_str(json).unwrap();
        assert_eq!(expr.node_count(&ExpandConfig { default_degree: 4 }), 8);
        let explicit: SkeletonExpr =
            serde_json::from_str(r#"{"farm":{"worker":{"seq":{"label":"w","service":2}},"degree":3}}"#).unwrap();
        assert_eq!(explicit.node_count(&ExpandConfig::default()), 5);
        assert!(serde_json::from_str::<SkeletonExpr>(r#"{"seq":{"label":"a","service":1,"x":2}}"#).is_err());
    }
}
