//! Multi-concern autonomic management for skeleton-structured parallel
//! applications.
//!
//! The crate is organised around a shared, versioned [`graph::ApplicationGraph`]
//! that several per-concern managers (performance, security, power) agree on
//! through a two-phase consensus protocol before any reconfiguration is
//! actuated. Everything runs inside a deterministic discrete-event simulation
//! so that runs can be replayed byte for byte.
//!
//! Module map:
//!
//! * [`graph`]: skeleton expressions, their expansion into the application
//!   graph, typed metadata, graph deltas.
//! * [`rules`]: fact store, priority-ordered rules and the per-manager
//!   control cycle.
//! * [`consensus`]: decisions, response collection, outcome resolution and
//!   atomic commit.
//! * [`managers`]: concrete performance/security/power managers, contracts and
//!   initial configuration.
//! * [`sim`]: the discrete-event runtime, monitoring and action execution.
//! * [`scenario`], [`system`], [`verdict`], [`trace`], [`cli`]: scenario
//!   files, the management loop, trace auditing and the command-line entry
//!   points.

pub mod cli;
pub mod consensus;
pub mod graph;
pub mod managers;
pub mod rules;
pub mod scenario;
pub mod sim;
pub mod system;
pub mod trace;
pub mod verdict;

pub use consensus::{
    classify, resolve, AbortReason, ConsensusOutcome, ConsensusResponse, CoordinationMode,
    Decision, DecisionId, Interference, Verdict,
};
pub use graph::{
    apply_delta, diff, expand, validate, ApplicationGraph, ArcId, ExpandConfig, GraphDelta,
    GraphError, NodeId, NodeKind, SkeletonExpr,
};
pub use managers::{Concern, Manager, QoSContract};
pub use rules::{Action, CycleOutcome, FactStore, Plan, Rule, RuleBase};
pub use scenario::Scenario;
pub use system::{ManagedSystem, RunReport};
