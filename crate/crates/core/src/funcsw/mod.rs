//! Functional-software layer: a data-driven task graph with grouping,
//! binding, static/dynamic configuration, synchronous firing rounds and
//! lifecycle supervision.
//!
//! Scheduling rule: a node fires in a round iff it is `Running` and every
//! input port holds a fresh datum. Firing consumes the data. Fired nodes run
//! in the graph's cached topological order (ties broken by `node_id`), so a
//! producer's outputs reach downstream nodes within the same round.

mod engine;
mod graph;
mod lifecycle;
mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{FailureRecord, FiringReport, NodeStats, ProducedSample, TaskGraph};
pub use graph::{build_graph, check_graph, topological_order};
pub use lifecycle::{is_legal_transition, LifecycleState, Transition};
pub use registry::{
    AlgorithmDescriptor, AlgorithmRef, AlgorithmRegistry, Factory, NodeBody, NodeFault, PortSchema,
    StepContext, StepOutput,
};

pub use crate::middleware::Payload;

/// Configuration values are free-form JSON.
pub type ConfigMap = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Acquisition,
    Abstraction,
    PreProcessing,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConfigMode {
    Static,
    #[default]
    Dynamic,
}

/// Where an input port reads from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PortBinding {
    /// A topic: produced by some node or declared external.
    Topic(String),
    /// The `port`-th output of another node.
    NodeOutput { node: String, port: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub node_id: String,
    pub stage: Stage,
    #[serde(default)]
    pub inputs: Vec<PortBinding>,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub group_id: String,
    pub algorithm: AlgorithmRef,
    /// The closed set of keys this node accepts in `configure`.
    #[serde(default)]
    pub config: ConfigMap,
    /// Keys absent here are `Dynamic`.
    #[serde(default)]
    pub config_modes: BTreeMap<String, ConfigMode>,
    pub watchdog_ms: u64,
}

impl NodeSpec {
    pub fn config_mode(&self, key: &str) -> ConfigMode {
        self.config_modes.get(key).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RestartPolicy {
    Never,
    UpTo(u32),
}

impl RestartPolicy {
    pub fn limit(self) -> u32 {
        match self {
            RestartPolicy::Never => 0,
            RestartPolicy::UpTo(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub group_id: String,
    #[serde(default)]
    pub binding_label: Option<String>,
    pub restart_policy: RestartPolicy,
    /// Started by `TaskGraph::start`; otherwise only by an explicit group start.
    #[serde(default = "default_true")]
    pub autostart: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    pub groups: Vec<GroupSpec>,
    /// Topics fed from outside the graph via `step`.
    #[serde(default)]
    pub external_topics: Vec<String>,
    /// Optional payload type name per topic, checked against port schemas.
    #[serde(default)]
    pub topic_types: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuncswError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("duplicate node id {0:?}")]
    DuplicateNodeId(String),
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("input {input:?} of node {node:?} has no producer")]
    UnresolvedInput { node: String, input: String },
    #[error("topic {topic:?} produced by both {first:?} and {second:?}")]
    DuplicateProducer {
        topic: String,
        first: String,
        second: String,
    },
    #[error("cycle detected: {}", cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error(
        "edge {from:?} ({from_stage:?}) -> {to:?} ({to_stage:?}) runs against the stage order"
    )]
    StageOrderViolation {
        from: String,
        from_stage: Stage,
        to: String,
        to_stage: Stage,
    },
    #[error("node {node:?}: port schema mismatch: {detail}")]
    PortSchemaMismatch { node: String, detail: String },
    #[error("binding conflict on {node:?}: {detail}")]
    BindingConflict { node: String, detail: String },
    #[error("node {node:?} has no config key {key:?}")]
    UnknownConfigKey { node: String, key: String },
    #[error("static key {key:?} of node {node:?} cannot change while running")]
    StaticKeyWhileRunning { node: String, key: String },
    #[error("algorithm {name} {version} already registered")]
    DuplicateAlgorithm { name: String, version: String },
    #[error("algorithm {name} {version} not found")]
    AlgorithmNotFound { name: String, version: String },
    #[error("invalid version {0:?}")]
    InvalidVersion(String),
    #[error("no loader for entry {0:?}")]
    UnknownEntry(String),
    #[error("node {node:?}: {detail}")]
    InvalidNode { node: String, detail: String },
    #[error("node {node:?}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        node: String,
        from: LifecycleState,
        to: LifecycleState,
    },
    #[error("node {0:?} is not a Service-stage node")]
    NotServiceStage(String),
}
