//! Deterministic discrete-event runtime for the application a graph describes.

pub(crate) mod actions;
mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, NodeId, PowerClass, ResourceId};

pub use actions::{execute_action, rank_free_resources, ActionContext, ActionEffect, ActionError};
pub use world::{power_committed, StagedPlan, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Trusted,
    Untrusted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resource {
    pub id: ResourceId,
    pub domain: Domain,
    pub power_class: PowerClass,
    pub power_cost: f64,
    /// Service-time divisor.
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proc_type: Option<String>,
}

impl Resource {
    pub fn new(id: &str, domain: Domain, power_class: PowerClass, power_cost: f64, speed: f64) -> Self {
        Resource { id: ResourceId::new(id), domain, power_class, power_cost, speed, proc_type: None }
    }

    pub fn trusted(&self) -> bool {
        self.domain == Domain::Trusted
    }
}

/// Resources by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResourcePool {
    resources: BTreeMap<ResourceId, Resource>,
}

impl ResourcePool {
    pub fn new(resources: impl IntoIterator<Item = Resource>) -> Result<Self, SimError> {
        let mut map = BTreeMap::new();
        for r in resources {
            if !(r.speed > 0.0) || !(r.power_cost > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "resource {} needs positive speed and powerCost",
                    r.id
                )));
            }
            if let Some(dup) = map.insert(r.id.clone(), r) {
                return Err(SimError::InvalidConfig(format!("duplicate resource id {}", dup.id)));
            }
        }
        Ok(ResourcePool { resources: map })
    }

    pub fn get(&self, id: &ResourceId) -> Option<&Resource> {
        self.resources.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Resource> {
        self.resources.values()
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadPhase {
    pub duration: f64,
    /// Tasks per second.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Monitoring period, seconds.
    pub tick: f64,
    /// Sliding monitoring window, seconds.
    pub window: f64,
    pub ssl_overhead: f64,
    pub run_length: f64,
    /// Exponential inter-arrival times instead of equal spacing.
    pub jitter: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, tick: 5.0, window: 10.0, ssl_overhead: 1.1, run_length: 600.0, jitter: false }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.tick > 0.0) {
            return bad("tick must be positive");
        }
        if self.tick > self.window {
            return bad("tick must not exceed window");
        }
        if !(self.ssl_overhead >= 1.0) {
            return bad("ssl_overhead must be at least 1");
        }
        if !(self.run_length > 0.0) {
            return bad("run_length must be positive");
        }
        Ok(())
    }
}

/// Monitored values at one instant, computed over `(time - window, time]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorSnapshot {
    pub time: f64,
    pub window: f64,
    /// Mean inter-arrival time at the managed farm's emitter.
    pub t_arr: Option<f64>,
    /// Completions per second at the managed farm's collector.
    pub throughput: f64,
    /// Completions per second leaving the application.
    pub sink_throughput: f64,
    pub degree: usize,
    pub utilization: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimEventKind {
    Arrive,
    Start,
    Complete,
    Dispatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub ev: SimEventKind,
    pub node: NodeId,
    pub task: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("node {0} has no location")]
    UnplacedNode(NodeId),
    #[error("node {node} is placed on unknown resource {resource}")]
    UnknownResource { node: NodeId, resource: ResourceId },
    #[error("resource {resource} hosts both {first} and {second}")]
    SharedResource { resource: ResourceId, first: NodeId, second: NodeId },
    #[error("application graph has no single entry node")]
    NoSource,
    #[error("cannot remove {0} while it holds tasks")]
    UnsupportedRemoval(NodeId),
    #[error("invalid simulation setup: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
