use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{farm_tag, worker_id};
use crate::graph::{
    ApplicationGraph, ArcId, ArcRecord, ChannelKind, MetaKey, MetaValue, MetadataSet, NodeId, NodeKind,
    NodeRecord, ResourceId,
};
use crate::rules::{Action, RecruitPolicy};

use super::{Resource, ResourcePool};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("no free resource matches the recruiting policy")]
    NoFreeResource,
    #[error("cannot remove the last worker of the farm")]
    RemoveLastWorker,
    #[error("the application has no farm to reconfigure")]
    NoManagedFarm,
    #[error("{0} needs a preceding {1}")]
    MissingPrerequisite(&'static str, &'static str),
}

/// What one action did to the scratch graph.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionEffect {
    Recruited(ResourceId),
    Allocated(NodeId),
    Connected(Vec<ArcId>),
    Removed(NodeId),
    None,
}

/// State threaded through the actions of one plan.
#[derive(Debug)]
pub struct ActionContext<'a> {
    pub pool: &'a ResourcePool,
    pub power_active: bool,
    pub utilization: &'a BTreeMap<NodeId, f64>,
    /// R′ chosen when the decision was proposed; reused if still eligible.
    pub preferred: Option<ResourceId>,
    pub recruited: Option<ResourceId>,
    pub new_worker: Option<NodeId>,
}

impl<'a> ActionContext<'a> {
    pub fn new(pool: &'a ResourcePool, power_active: bool, utilization: &'a BTreeMap<NodeId, f64>) -> Self {
        ActionContext { pool, power_active, utilization, preferred: None, recruited: None, new_worker: None }
    }
}

/// Unoccupied resources in recruiting order for `policy`: power class first
/// when a power manager is active (default policy only), then fastest first,
/// then id.
pub fn rank_free_resources<'p>(
    g: &ApplicationGraph,
    pool: &'p ResourcePool,
    policy: RecruitPolicy,
    power_active: bool,
) -> Vec<&'p Resource> {
    let used: BTreeSet<&ResourceId> = g.nodes().values().filter_map(|n| n.meta.location()).collect();
    let mut free: Vec<&Resource> = pool
        .iter()
        .filter(|r| !used.contains(&r.id))
        .filter(|r| match policy {
            RecruitPolicy::OnlyClass(c) => r.power_class == c,
            _ => true,
        })
        .collect();
    let by_class = power_active && policy == RecruitPolicy::Default;
    free.sort_by(|a, b| {
        let class = if by_class { a.power_class.rank().cmp(&b.power_class.rank()) } else { std::cmp::Ordering::Equal };
        class.then(b.speed.total_cmp(&a.speed)).then_with(|| a.id.cmp(&b.id))
    });
    free
}

/// Placement metadata for a node hosted on `r`.
pub(crate) fn placement(r: &Resource) -> MetadataSet {
    let mut meta = MetadataSet::new()
        .with(MetaKey::Location, MetaValue::Resource(r.id.clone()))
        .with(MetaKey::Secure, MetaValue::Flag(r.trusted()))
        .with(MetaKey::PowerClass, MetaValue::Power(r.power_class));
    if let Some(p) = &r.proc_type {
        meta = meta.with(MetaKey::ProcType, MetaValue::Text(p.clone()));
    }
    meta
}

fn channel(kind: ChannelKind) -> ArcRecord {
    ArcRecord { meta: MetadataSet::new().with(MetaKey::ChannelKind, MetaValue::Channel(kind)) }
}

/// Applies one action to a scratch graph. Version numbers are left alone; the
/// caller diffs the scratch graph against the shared one once the whole plan
/// has succeeded.
pub fn execute_action(
    g: &mut ApplicationGraph,
    action: &Action,
    ctx: &mut ActionContext<'_>,
) -> Result<ActionEffect, ActionError> {
    match action {
        Action::FindNewResource { policy } => {
            let ranked = rank_free_resources(g, ctx.pool, *policy, ctx.power_active);
            let pick = ctx
                .preferred
                .as_ref()
                .and_then(|p| ranked.iter().find(|r| &r.id == p))
                .or_else(|| ranked.first())
                .ok_or(ActionError::NoFreeResource)?;
            ctx.recruited = Some(pick.id.clone());
            Ok(ActionEffect::Recruited(pick.id.clone()))
        }
        Action::AllocateNewWorker => {
            let rid = ctx
                .recruited
                .as_ref()
                .ok_or(ActionError::MissingPrerequisite("allocateNewWorker", "findNewResource"))?;
            let resource = ctx.pool.get(rid).ok_or(ActionError::NoFreeResource)?;
            let farm = g.managed_farm().ok_or(ActionError::NoManagedFarm)?;
            let replica = farm
                .workers
                .iter()
                .filter_map(|w| g.node(w)?.path.split_last().map(|(_, i)| i))
                .max()
                .unwrap_or(0)
                + 1;
            let id = worker_id(farm_tag(&farm.emitter), replica);
            let record = NodeRecord { kind: NodeKind::Worker, path: farm.path.child(replica), meta: placement(resource) };
            g.insert_node(id.clone(), record);
            ctx.new_worker = Some(id.clone());
            Ok(ActionEffect::Allocated(id))
        }
        Action::ConnectWorker | Action::ConnectSslWorker => {
            let kind = if *action == Action::ConnectSslWorker { ChannelKind::Ssl } else { ChannelKind::Plain };
            let w = ctx
                .new_worker
                .clone()
                .ok_or(ActionError::MissingPrerequisite("connectWorker", "allocateNewWorker"))?;
            let farm = g.managed_farm().ok_or(ActionError::NoManagedFarm)?;
            let arcs = vec![ArcId::new(farm.emitter, w.clone()), ArcId::new(w, farm.collector)];
            for a in &arcs {
                g.insert_arc(a.clone(), channel(kind));
            }
            Ok(ActionEffect::Connected(arcs))
        }
        Action::RemoveWorker => {
            let farm = g.managed_farm().ok_or(ActionError::NoManagedFarm)?;
            if farm.degree() <= 1 {
                return Err(ActionError::RemoveLastWorker);
            }
            let util = |w: &NodeId| ctx.utilization.get(w).copied().unwrap_or(0.0);
            let victim = farm
                .workers
                .iter()
                .min_by(|a, b| util(a).total_cmp(&util(b)).then_with(|| a.cmp(b)))
                .expect("degree checked")
                .clone();
            g.remove_node(&victim);
            Ok(ActionEffect::Removed(victim))
        }
        Action::AskConsensus | Action::Answer(_) | Action::LowerPriority(_) => Ok(ActionEffect::None),
    }
}

pub(crate) fn plain_channel() -> ArcRecord {
    channel(ChannelKind::Plain)
}

pub(crate) fn ssl_channel() -> ArcRecord {
    channel(ChannelKind::Ssl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{expand, Degree, ExpandConfig, PowerClass, SkeletonExpr};
    use crate::sim::Domain;

    fn pool() -> ResourcePool {
        ResourcePool::new([
            Resource::new("r1", Domain::Trusted, PowerClass::Green, 1.0, 1.0),
            Resource::new("r2", Domain::Untrusted, PowerClass::Red, 5.0, 2.0),
        ])
        .unwrap()
    }

    fn farm(degree: u32) -> ApplicationGraph {
        expand(&SkeletonExpr::farm(SkeletonExpr::seq("w", 4.0), Degree::Explicit(degree)), &ExpandConfig::default())
            .unwrap()
    }

    #[test]
    fn fastest_first_without_power() {
        let g = ApplicationGraph::empty();
        let p = pool();
        let ranked: Vec<&str> = rank_free_resources(&g, &p, RecruitPolicy::Default, false)
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(ranked, ["r2", "r1"]);
        let green_first: Vec<&str> = rank_free_resources(&g, &p, RecruitPolicy::Default, true)
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(green_first, ["r1", "r2"]);
        assert!(rank_free_resources(&g, &p, RecruitPolicy::PowerAgnostic, true)[0].id.as_str() == "r2");
    }

    #[test]
    fn ssl_connection_marks_both_arcs() {
        let p = pool();
        let util = BTreeMap::new();
        let mut ctx = ActionContext::new(&p, false, &util);
        let mut g = farm(4);
        for a in [Action::find_new_resource(), Action::AllocateNewWorker, Action::ConnectSslWorker] {
            execute_action(&mut g, &a, &mut ctx).unwrap();
        }
        let w5 = NodeId::from("n_w5");
        assert_eq!(g.node(&w5).unwrap().meta.location().unwrap().as_str(), "r2");
        assert_eq!(g.node(&w5).unwrap().meta.secure(), Some(false));
        for a in [ArcId::new("n_e", "n_w5"), ArcId::new("n_w5", "n_c")] {
            assert_eq!(g.arc(&a).unwrap().meta.channel_kind(), Some(ChannelKind::Ssl));
        }
        assert!(crate::graph::validate(&g).is_well_formed());
    }

    #[test]
    fn exhausted_pool_and_last_worker_fail() {
        let p = ResourcePool::default();
        let util = BTreeMap::new();
        let mut ctx = ActionContext::new(&p, false, &util);
        let mut g = farm(1);
        assert_eq!(execute_action(&mut g, &Action::find_new_resource(), &mut ctx), Err(ActionError::NoFreeResource));
        assert_eq!(execute_action(&mut g, &Action::RemoveWorker, &mut ctx), Err(ActionError::RemoveLastWorker));
    }

    #[test]
    fn removes_least_utilised_worker() {
        let p = ResourcePool::default();
        let util: BTreeMap<NodeId, f64> =
            [("n_w1", 0.9), ("n_w2", 0.2), ("n_w3", 0.2)].into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut ctx = ActionContext::new(&p, false, &util);
        let mut g = farm(3);
        assert_eq!(
            execute_action(&mut g, &Action::RemoveWorker, &mut ctx),
            Ok(ActionEffect::Removed("n_w2".into()))
        );
        assert_eq!(g.node_count(), 4);
        assert!(crate::graph::validate(&g).is_well_formed());
    }
}
