//! Scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::CoordinationMode;
use crate::graph::{GraphError, PowerClass, ResourceId, SkeletonExpr};
use crate::managers::{ContractList, Knobs, ManagerError, QoSContract};
use crate::sim::{Domain, Resource, ResourcePool, SimConfig, SimError, WorkloadPhase};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Skeleton(#[from] GraphError),
    #[error(transparent)]
    Contracts(#[from] ManagerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Invalid(String),
}

/// One pool line; with `count` it stands for `count` identical resources
/// named `{id}1`, `{id}2`, ... (zero-padded to equal width).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PoolEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    pub domain: Domain,
    pub power_class: PowerClass,
    pub power_cost: f64,
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proc_type: Option<String>,
}

impl PoolEntry {
    fn expand(&self) -> Vec<Resource> {
        let make = |id: String| Resource {
            id: ResourceId::new(id),
            domain: self.domain,
            power_class: self.power_class,
            power_cost: self.power_cost,
            speed: self.speed,
            proc_type: self.proc_type.clone(),
        };
        match self.count {
            None => vec![make(self.id.clone())],
            Some(n) => {
                let width = n.to_string().len();
                (1..=n).map(|i| make(format!("{}{i:0width$}", self.id))).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub skeleton: SkeletonExpr,
    pub contracts: Vec<QoSContract>,
    pub pool: Vec<PoolEntry>,
    pub workload: Vec<WorkloadPhase>,
    #[serde(default)]
    pub mode: CoordinationMode,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub knobs: Knobs,
}

impl Scenario {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.skeleton.check()?;
        self.contract_list()?;
        self.resources()?;
        self.sim.check()?;
        if self.workload.is_empty() {
            return Err(ScenarioError::Invalid("workload needs at least one phase".into()));
        }
        for p in &self.workload {
            if !(p.duration > 0.0) || !(p.rate >= 0.0) {
                return Err(ScenarioError::Invalid("workload phases need duration > 0 and rate >= 0".into()));
            }
        }
        if self.knobs.default_degree == 0 {
            return Err(ScenarioError::Invalid("default_degree must be at least 1".into()));
        }
        if !(self.knobs.hysteresis_factor > 1.0) {
            return Err(ScenarioError::Invalid("hysteresis_factor must exceed 1".into()));
        }
        Ok(())
    }

    pub fn contract_list(&self) -> Result<ContractList, ManagerError> {
        ContractList::new(self.contracts.clone())
    }

    pub fn resources(&self) -> Result<ResourcePool, SimError> {
        ResourcePool::new(self.pool.iter().flat_map(PoolEntry::expand))
    }
}
