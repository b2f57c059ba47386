#![allow(dead_code)]

use std::path::PathBuf;

use multiconcern::graph::{diff, Degree, PowerClass, SkeletonExpr};
use multiconcern::managers::{initialize, ContractList, Knobs, QoSContract};
use multiconcern::sim::{Domain, Resource, ResourcePool, SimConfig, WorkloadPhase, World};
use multiconcern::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn trusted_pool(n: usize) -> ResourcePool {
    ResourcePool::new((1..=n).map(|i| Resource::new(&format!("r{i:03}"), Domain::Trusted, PowerClass::Green, 1.0, 1.0)))
        .unwrap()
}

pub fn farm(service: f64, degree: u32) -> SkeletonExpr {
    SkeletonExpr::farm(SkeletonExpr::seq("w", service), Degree::Explicit(degree))
}

/// A world running `expr` placed on an all-trusted pool, unmanaged.
pub fn placed_world(expr: &SkeletonExpr, workload: Vec<WorkloadPhase>, cfg: SimConfig) -> World {
    let cfg_nodes = multiconcern::graph::ExpandConfig::default();
    let pool = trusted_pool(expr.node_count(&cfg_nodes) + 2);
    let contracts = ContractList::new(vec![QoSContract::SecureData]).unwrap();
    let (g, _) = initialize(&contracts, expr, &pool, &Knobs::default()).unwrap();
    let mut world = World::new(expr.clone(), pool, workload, cfg).unwrap();
    world.install(&diff(&world.graph().clone(), &g)).unwrap();
    world
}

pub fn phase(duration: f64, rate: f64) -> WorkloadPhase {
    WorkloadPhase { duration, rate }
}
pub mod table;
pub mod fuzz;
