use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{expand, ApplicationGraph, ExpandConfig, NodeId, PowerClass, SkeletonExpr, SkeletonPath, Target};
use crate::sim::actions::{placement, plain_channel, ssl_channel};
use crate::sim::{Resource, ResourcePool};

use super::{Concern, ContractList, Knobs, Manager, ManagerError, QoSContract};

/// Nodes in dataflow order: a topological order with ties broken by
/// skeleton path, then id.
pub fn placement_order(g: &ApplicationGraph) -> Vec<NodeId> {
    let mut indegree: BTreeMap<&NodeId, usize> = g.nodes().keys().map(|n| (n, 0)).collect();
    for a in g.arcs().keys() {
        *indegree.entry(&a.to).or_default() += 1;
    }
    let key = |n: &NodeId| (g.node(n).map(|r| r.path.clone()).unwrap_or_else(SkeletonPath::root), n.clone());
    let mut ready: BTreeSet<(SkeletonPath, NodeId)> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| key(n)).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(next) = ready.pop_first() {
        let n = next.1;
        for a in g.out_arcs(&n) {
            let d = indegree.get_mut(&a.to).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(key(&a.to));
            }
        }
        order.push(n);
    }
    order
}

/// Largest farm degree whose expansion still fits in `capacity` nodes.
fn max_degree(expr: &SkeletonExpr, cfg: &ExpandConfig, capacity: usize) -> u32 {
    let mut d = 1;
    while expr.with_farm_degree(d + 1).node_count(cfg) <= capacity {
        d += 1;
    }
    d
}

/// Builds the initial configuration under the first contract's manager and
/// activates one manager per contract, in contract order.
///
/// The returned graph is at version 0; the caller commits it as the first
/// decision.
pub fn initialize(
    contracts: &ContractList,
    expr: &SkeletonExpr,
    pool: &ResourcePool,
    knobs: &Knobs,
) -> Result<(ApplicationGraph, Vec<Manager>), ManagerError> {
    if pool.is_empty() {
        return Err(ManagerError::EmptyPool);
    }
    let cfg = ExpandConfig { default_degree: knobs.default_degree };
    let power_active = contracts.has(Concern::Power);
    let security_active = contracts.has(Concern::Security);

    let mut eligible: Vec<&Resource> = pool.iter().collect();
    let by_speed = |a: &&Resource, b: &&Resource| b.speed.total_cmp(&a.speed).then_with(|| a.id.cmp(&b.id));
    let expr = match contracts.first() {
        QoSContract::SecureData => {
            eligible.sort_by(|a, b| {
                b.trusted()
                    .cmp(&a.trusted())
                    .then_with(|| if power_active { a.power_class.rank().cmp(&b.power_class.rank()) } else { std::cmp::Ordering::Equal })
                    .then_with(|| by_speed(a, b))
            });
            expr.clone()
        }
        QoSContract::MinThroughput { rate } => {
            eligible.sort_by(by_speed);
            match expr.first_farm() {
                Some((path, _)) => {
                    let service = expr.service_at(&path.child(1)).unwrap_or(1.0);
                    let needed = ((rate * service).ceil() as u32).max(1);
                    let cap = max_degree(expr, &cfg, pool.len());
                    let degree = if knobs.max_greedy { cap } else { needed.min(cap) };
                    expr.with_farm_degree(degree)
                }
                None => expr.clone(),
            }
        }
        QoSContract::PowerBudget { .. } => {
            eligible.retain(|r| r.power_class == PowerClass::Green);
            eligible.sort_by(by_speed);
            expr.clone()
        }
    };

    let mut g = expand(&expr, &cfg)?;
    let order = placement_order(&g);
    if order.len() > eligible.len() {
        return Err(ManagerError::InsufficientResources { needed: order.len(), available: eligible.len() });
    }
    let mut trusted = BTreeMap::new();
    for (node, r) in order.iter().zip(&eligible) {
        *g.meta_mut(&Target::Node(node.clone())).expect("expanded node") = placement(r);
        trusted.insert(node.clone(), r.trusted());
    }
    let arcs: Vec<_> = g.arcs().keys().cloned().collect();
    for a in arcs {
        let exposed = !trusted[&a.from] || !trusted[&a.to];
        let record = if security_active && exposed { ssl_channel() } else { plain_channel() };
        *g.meta_mut(&Target::Arc(a)).expect("expanded arc") = record.meta;
    }

    let mut managers = Vec::new();
    for c in contracts.iter() {
        managers.push(Manager::new(c.clone(), knobs, pool.clone())?);
    }
    Ok((g, managers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ChannelKind, Degree};
    use crate::sim::Domain;

    fn section4() -> SkeletonExpr {
        SkeletonExpr::pipeline(vec![
            SkeletonExpr::seq("s1", 1.0),
            SkeletonExpr::farm(SkeletonExpr::seq("w", 4.0), Degree::Default),
            SkeletonExpr::seq("s3", 0.5),
        ])
    }

    fn pool(trusted: usize, untrusted: usize) -> ResourcePool {
        let t = (1..=trusted).map(|i| Resource::new(&format!("t{i:02}"), Domain::Trusted, PowerClass::Green, 1.0, 1.0));
        let u = (1..=untrusted).map(|i| Resource::new(&format!("u{i:02}"), Domain::Untrusted, PowerClass::Green, 1.0, 1.0));
        ResourcePool::new(t.chain(u)).unwrap()
    }

    #[test]
    fn security_first_on_trusted_pool() {
        let contracts =
            ContractList::new(vec![QoSContract::SecureData, QoSContract::MinThroughput { rate: 1.0 }]).unwrap();
        let (g, managers) = initialize(&contracts, &section4(), &pool(8, 0), &Knobs::default()).unwrap();
        assert_eq!(g.node_count(), 8);
        assert!(g.nodes().values().all(|n| n.meta.secure() == Some(true)));
        assert!(g.arcs().values().all(|a| a.meta.channel_kind() == Some(ChannelKind::Plain)));
        let concerns: Vec<Concern> = managers.iter().map(|m| m.concern()).collect();
        assert_eq!(concerns, [Concern::Security, Concern::Performance]);
    }

    #[test]
    fn untrusted_placements_get_ssl_arcs() {
        let contracts = ContractList::new(vec![QoSContract::SecureData]).unwrap();
        let (g, _) = initialize(&contracts, &section4(), &pool(4, 8), &Knobs::default()).unwrap();
        for (a, r) in g.arcs() {
            let exposed = g.is_secure(&a.from) == Some(false) || g.is_secure(&a.to) == Some(false);
            let ssl = r.meta.channel_kind() == Some(ChannelKind::Ssl);
            assert_eq!(exposed, ssl, "{a}");
        }
        assert_eq!(g.is_secure(&"n_s1".into()), Some(true));
    }

    #[test]
    fn performance_first_sizes_farm_from_demand() {
        let expr = SkeletonExpr::farm(SkeletonExpr::seq("w", 2.0), Degree::Default);
        let contracts = ContractList::new(vec![QoSContract::MinThroughput { rate: 1.0 }]).unwrap();
        let (g, _) = initialize(&contracts, &expr, &pool(8, 0), &Knobs::default()).unwrap();
        assert_eq!(g.managed_farm().unwrap().degree(), 2);
        let greedy = Knobs { max_greedy: true, ..Knobs::default() };
        let (g, _) = initialize(&contracts, &expr, &pool(8, 0), &greedy).unwrap();
        assert_eq!(g.managed_farm().unwrap().degree(), 6);
    }

    #[test]
    fn guard_cases() {
        assert!(matches!(ContractList::new(vec![]), Err(ManagerError::NoContracts)));
        assert!(matches!(
            ContractList::new(vec![QoSContract::SecureData, QoSContract::SecureData]),
            Err(ManagerError::DuplicateConcern(Concern::Security))
        ));
        let contracts = ContractList::new(vec![QoSContract::SecureData]).unwrap();
        assert!(matches!(
            initialize(&contracts, &section4(), &pool(3, 0), &Knobs::default()),
            Err(ManagerError::InsufficientResources { needed: 8, available: 3 })
        ));
    }
}
