//! Graph runtime: lifecycle, binding, configuration and firing rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::Serialize;

use super::graph::{check_ports, validate, Validated};
use super::lifecycle::{is_legal_transition, LifecycleState, Transition};
use super::registry::{
    AlgorithmDescriptor, AlgorithmRef, AlgorithmRegistry, NodeBody, StepContext,
};
use super::{ConfigMap, ConfigMode, Edge, FuncswError, GraphSpec, NodeSpec, Payload, Stage};
use crate::util::digest_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProducedSample {
    pub node: String,
    pub topic: String,
    pub len: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailureRecord {
    pub node: String,
    pub reason: String,
    pub state_after: LifecycleState,
    pub restart_count: u32,
}

/// Outcome of one scheduling round. Serializes deterministically; payloads
/// are reported by length and digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiringReport {
    pub round: u64,
    pub fired: Vec<String>,
    pub produced: Vec<ProducedSample>,
    /// Simulated execution time of every node that ran this round.
    pub elapsed_us: BTreeMap<String, u64>,
    pub failures: Vec<FailureRecord>,
    /// Produced payloads, in production order.
    #[serde(skip)]
    pub outputs: Vec<(String, Payload)>,
}

impl FiringReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Payloads produced on `topic` this round.
    pub fn outputs_on<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a Payload> + 'a {
        self.outputs
            .iter()
            .filter(move |(t, _)| t == topic)
            .map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub fired: u64,
    pub failures: u64,
    pub restarts: u32,
    pub max_elapsed_us: u64,
}

struct NodeRuntime {
    spec: NodeSpec,
    descriptor: AlgorithmDescriptor,
    input_topics: Vec<String>,
    body: Box<dyn NodeBody>,
    state: LifecycleState,
    restart_count: u32,
    label: Option<String>,
    ports: Vec<Option<Payload>>,
    stats: NodeStats,
}

struct GroupRuntime {
    spec: super::GroupSpec,
    label: Option<String>,
}

/// A validated, executable task graph.
pub struct TaskGraph {
    spec: GraphSpec,
    registry: Arc<AlgorithmRegistry>,
    nodes: Vec<NodeRuntime>,
    index: BTreeMap<String, usize>,
    groups: BTreeMap<String, GroupRuntime>,
    edges: Vec<Edge>,
    order: Vec<usize>,
    consumers: BTreeMap<String, Vec<(usize, usize)>>,
    external: BTreeSet<String>,
    round: u64,
    trace: Vec<Transition>,
}

impl std::fmt::Debug for TaskGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskGraph")
            .field("order", &self.topological_order())
            .field("round", &self.round)
            .finish()
    }
}

impl TaskGraph {
    pub(crate) fn from_validated(
        spec: GraphSpec,
        registry: Arc<AlgorithmRegistry>,
        v: Validated,
    ) -> Result<Self, FuncswError> {
        let groups = spec
            .groups
            .iter()
            .map(|g| {
                (
                    g.group_id.clone(),
                    GroupRuntime {
                        spec: g.clone(),
                        label: g.binding_label.clone(),
                    },
                )
            })
            .collect::<BTreeMap<_, _>>();
        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for ((n, d), topics) in spec.nodes.iter().zip(v.descriptors).zip(v.input_topics) {
            let factory = registry.resolve(&d.name, &d.version)?;
            nodes.push(NodeRuntime {
                body: factory(&n.config),
                label: groups[&n.group_id].label.clone(),
                ports: vec![None; n.inputs.len()],
                spec: n.clone(),
                descriptor: d,
                input_topics: topics,
                state: LifecycleState::Created,
                restart_count: 0,
                stats: NodeStats::default(),
            });
        }
        let mut g = TaskGraph {
            index: BTreeMap::new(),
            external: spec.external_topics.iter().cloned().collect(),
            spec,
            registry,
            nodes,
            groups,
            edges: v.edges,
            order: v.order,
            consumers: BTreeMap::new(),
            round: 0,
            trace: Vec::new(),
        };
        g.reindex();
        Ok(g)
    }

    fn reindex(&mut self) {
        self.index = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.spec.node_id.clone(), i))
            .collect();
        self.consumers.clear();
        for (i, n) in self.nodes.iter().enumerate() {
            for (p, t) in n.input_topics.iter().enumerate() {
                self.consumers.entry(t.clone()).or_default().push((i, p));
            }
        }
    }

    fn idx(&self, node_id: &str) -> Result<usize, FuncswError> {
        self.index
            .get(node_id)
            .copied()
            .ok_or_else(|| FuncswError::UnknownNode(node_id.to_string()))
    }

    pub fn topological_order(&self) -> Vec<&str> {
        self.order
            .iter()
            .map(|&i| self.nodes[i].spec.node_id.as_str())
            .collect()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn group_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn has_group(&self, group_id: &str) -> bool {
        self.groups.contains_key(group_id)
    }

    pub fn state(&self, node_id: &str) -> Result<LifecycleState, FuncswError> {
        Ok(self.nodes[self.idx(node_id)?].state)
    }

    pub fn restart_count(&self, node_id: &str) -> Result<u32, FuncswError> {
        Ok(self.nodes[self.idx(node_id)?].restart_count)
    }

    pub fn label(&self, node_id: &str) -> Result<Option<&str>, FuncswError> {
        Ok(self.nodes[self.idx(node_id)?].label.as_deref())
    }

    pub fn config(&self, node_id: &str) -> Result<&ConfigMap, FuncswError> {
        Ok(&self.nodes[self.idx(node_id)?].spec.config)
    }

    pub fn algorithm(&self, node_id: &str) -> Result<&AlgorithmDescriptor, FuncswError> {
        Ok(&self.nodes[self.idx(node_id)?].descriptor)
    }

    /// Nodes of a group, in id order.
    pub fn group_nodes(&self, group_id: &str) -> Result<Vec<&str>, FuncswError> {
        if !self.groups.contains_key(group_id) {
            return Err(FuncswError::UnknownGroup(group_id.to_string()));
        }
        Ok(self
            .index
            .iter()
            .filter(|(_, &i)| self.nodes[i].spec.group_id == group_id)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    pub fn stats(&self) -> BTreeMap<String, NodeStats> {
        self.nodes
            .iter()
            .map(|n| (n.spec.node_id.clone(), n.stats))
            .collect()
    }

    /// Every lifecycle transition so far, in order.
    pub fn trace(&self) -> &[Transition] {
        &self.trace
    }

    fn transition(&mut self, i: usize, to: LifecycleState) -> Result<(), FuncswError> {
        let limit = self.groups[&self.nodes[i].spec.group_id]
            .spec
            .restart_policy
            .limit();
        let n = &mut self.nodes[i];
        if !is_legal_transition(n.state, to, n.restart_count, limit) {
            return Err(FuncswError::IllegalTransition {
                node: n.spec.node_id.clone(),
                from: n.state,
                to,
            });
        }
        let from = n.state;
        if from == LifecycleState::Failed && to == LifecycleState::Running {
            n.restart_count += 1;
            n.stats.restarts = n.restart_count;
        }
        n.state = to;
        self.trace.push(Transition {
            round: self.round,
            node: n.spec.node_id.clone(),
            from,
            to,
            restart_count: n.restart_count,
        });
        Ok(())
    }

    fn start_node(&mut self, i: usize) -> Result<(), FuncswError> {
        match self.nodes[i].state {
            LifecycleState::Created => {
                self.transition(i, LifecycleState::Configured)?;
                self.transition(i, LifecycleState::Running)
            }
            LifecycleState::Configured => self.transition(i, LifecycleState::Running),
            LifecycleState::Running | LifecycleState::Failed => Ok(()),
            LifecycleState::Stopped => Err(FuncswError::IllegalTransition {
                node: self.nodes[i].spec.node_id.clone(),
                from: LifecycleState::Stopped,
                to: LifecycleState::Running,
            }),
        }
    }

    /// Starts every autostart group.
    pub fn start(&mut self) -> Result<(), FuncswError> {
        let auto: Vec<String> = self
            .groups
            .values()
            .filter(|g| g.spec.autostart)
            .map(|g| g.spec.group_id.clone())
            .collect();
        for g in auto {
            self.start_group(&g)?;
        }
        Ok(())
    }

    /// Brings every node of the group to `Running`. Already running or failed
    /// nodes are left alone; stopped nodes cannot be restarted.
    pub fn start_group(&mut self, group_id: &str) -> Result<(), FuncswError> {
        let members: Vec<usize> = self
            .group_nodes(group_id)?
            .iter()
            .map(|id| self.index[*id])
            .collect();
        for i in members {
            self.start_node(i)?;
        }
        Ok(())
    }

    /// Moves every running or failed node of the group to `Stopped`. Nodes
    /// that never started are left as they are.
    pub fn stop_group(&mut self, group_id: &str) -> Result<(), FuncswError> {
        let members: Vec<usize> = self
            .group_nodes(group_id)?
            .iter()
            .map(|id| self.index[*id])
            .collect();
        for i in members {
            if matches!(
                self.nodes[i].state,
                LifecycleState::Running | LifecycleState::Failed
            ) {
                self.transition(i, LifecycleState::Stopped)?;
                self.nodes[i].ports.iter_mut().for_each(|p| *p = None);
            }
        }
        Ok(())
    }

    fn group_started(&self, group_id: &str) -> bool {
        self.nodes.iter().any(|n| {
            n.spec.group_id == group_id
                && !matches!(
                    n.state,
                    LifecycleState::Created | LifecycleState::Configured
                )
        })
    }

    /// Labels every node in the group. Allowed only before the group starts;
    /// later binds fail with `BindingConflict`.
    pub fn bind(&mut self, group_id: &str, label: &str) -> Result<(), FuncswError> {
        if !self.groups.contains_key(group_id) {
            return Err(FuncswError::UnknownGroup(group_id.to_string()));
        }
        if self.group_started(group_id) {
            return Err(FuncswError::BindingConflict {
                node: group_id.to_string(),
                detail: "binding is static once the group has started".into(),
            });
        }
        for n in self.nodes.iter().filter(|n| n.spec.group_id == group_id) {
            if let Some(req) = &n.descriptor.binding_requirement {
                if req != label {
                    return Err(FuncswError::BindingConflict {
                        node: n.spec.node_id.clone(),
                        detail: format!("requires {req:?}, group bound to {label:?}"),
                    });
                }
            }
        }
        for n in self
            .nodes
            .iter_mut()
            .filter(|n| n.spec.group_id == group_id)
        {
            n.label = Some(label.to_string());
        }
        let g = self.groups.get_mut(group_id).unwrap();
        g.label = Some(label.to_string());
        g.spec.binding_label = Some(label.to_string());
        for s in self
            .spec
            .groups
            .iter_mut()
            .filter(|s| s.group_id == group_id)
        {
            s.binding_label = Some(label.to_string());
        }
        Ok(())
    }

    /// Applies a config patch atomically: either every key is accepted or
    /// none is. Takes effect from the next firing.
    pub fn configure(&mut self, node_id: &str, patch: &ConfigMap) -> Result<(), FuncswError> {
        let i = self.idx(node_id)?;
        let n = &self.nodes[i];
        let live = matches!(n.state, LifecycleState::Running | LifecycleState::Failed);
        for key in patch.keys() {
            if !n.spec.config.contains_key(key) {
                return Err(FuncswError::UnknownConfigKey {
                    node: node_id.to_string(),
                    key: key.clone(),
                });
            }
            if live && n.spec.config_mode(key) == ConfigMode::Static {
                return Err(FuncswError::StaticKeyWhileRunning {
                    node: node_id.to_string(),
                    key: key.clone(),
                });
            }
        }
        let n = &mut self.nodes[i];
        for (k, v) in patch {
            n.spec.config.insert(k.clone(), v.clone());
        }
        self.spec.nodes[i].config = n.spec.config.clone();
        Ok(())
    }

    /// Handles a failure of a running node: it becomes `Failed`, then is
    /// restarted with cleared inputs and a fresh body if its group's restart
    /// budget allows.
    pub fn on_node_failure(&mut self, node_id: &str) -> Result<LifecycleState, FuncswError> {
        let i = self.idx(node_id)?;
        self.fail(i)
    }

    fn fail(&mut self, i: usize) -> Result<LifecycleState, FuncswError> {
        self.transition(i, LifecycleState::Failed)?;
        self.nodes[i].stats.failures += 1;
        let limit = self.groups[&self.nodes[i].spec.group_id]
            .spec
            .restart_policy
            .limit();
        if self.nodes[i].restart_count < limit {
            self.transition(i, LifecycleState::Running)?;
            let factory = self.registry.resolve(
                &self.nodes[i].descriptor.name,
                &self.nodes[i].descriptor.version,
            )?;
            let n = &mut self.nodes[i];
            n.body = factory(&n.spec.config);
            n.ports.iter_mut().for_each(|p| *p = None);
        }
        Ok(self.nodes[i].state)
    }

    fn delivery(&mut self, topic: &str, payload: &Payload) {
        if let Some(cs) = self.consumers.get(topic) {
            for &(i, p) in cs {
                self.nodes[i].ports[p] = Some(payload.clone());
            }
        }
    }

    /// Runs one synchronous firing round.
    ///
    /// External inputs go to consumers of declared external topics; the last
    /// sample given for a topic wins. Samples for other topics are ignored.
    pub fn step(&mut self, external_inputs: &BTreeMap<String, Vec<Payload>>) -> FiringReport {
        let round = self.round;
        for (topic, samples) in external_inputs {
            if !self.external.contains(topic) {
                log::debug!("ignoring input for non-external topic {topic}");
                continue;
            }
            if let Some(last) = samples.last() {
                self.delivery(topic, last);
            }
        }
        let mut report = FiringReport {
            round,
            fired: Vec::new(),
            produced: Vec::new(),
            elapsed_us: BTreeMap::new(),
            failures: Vec::new(),
            outputs: Vec::new(),
        };
        for k in 0..self.order.len() {
            let i = self.order[k];
            let n = &mut self.nodes[i];
            if n.state != LifecycleState::Running || n.ports.iter().any(Option::is_none) {
                continue;
            }
            let inputs: Vec<Payload> = n.ports.iter_mut().map(|p| p.take().unwrap()).collect();
            let ctx = StepContext {
                node_id: &n.spec.node_id,
                round,
                inputs: &inputs,
                config: &n.spec.config,
            };
            let body = &mut n.body;
            let outcome = catch_unwind(AssertUnwindSafe(|| body.step(&ctx)));
            let node_id = n.spec.node_id.clone();
            let fault = match outcome {
                Ok(Ok(out)) => {
                    n.stats.max_elapsed_us = n.stats.max_elapsed_us.max(out.elapsed_us);
                    report.elapsed_us.insert(node_id.clone(), out.elapsed_us);
                    if out.elapsed_us > n.spec.watchdog_ms.saturating_mul(1000) {
                        Some(format!(
                            "watchdog: {} us exceeds {} ms",
                            out.elapsed_us, n.spec.watchdog_ms
                        ))
                    } else if out.outputs.len() != n.spec.outputs.len() {
                        Some(format!(
                            "body returned {} outputs for {} ports",
                            out.outputs.len(),
                            n.spec.outputs.len()
                        ))
                    } else {
                        n.stats.fired += 1;
                        report.fired.push(node_id.clone());
                        let topics = n.spec.outputs.clone();
                        for (topic, p) in topics.into_iter().zip(out.outputs) {
                            if let Some(p) = p {
                                report.produced.push(ProducedSample {
                                    node: node_id.clone(),
                                    topic: topic.clone(),
                                    len: p.len(),
                                    digest: digest_hex(&p),
                                });
                                self.delivery(&topic, &p);
                                report.outputs.push((topic, p));
                            }
                        }
                        None
                    }
                }
                Ok(Err(f)) => Some(f.0),
                Err(_) => Some("body panicked".to_string()),
            };
            if let Some(reason) = fault {
                let state_after = self.fail(i).expect("running node can fail");
                report.failures.push(FailureRecord {
                    node: node_id,
                    reason,
                    state_after,
                    restart_count: self.nodes[i].restart_count,
                });
            }
        }
        self.round += 1;
        report
    }

    fn revalidate(&self, spec: &GraphSpec) -> Result<Validated, FuncswError> {
        validate(spec, &self.registry)
    }

    /// Adds a Service-stage node between rounds. It starts right away if its
    /// group is already running.
    pub fn add_node(&mut self, node: NodeSpec) -> Result<(), FuncswError> {
        if node.stage != Stage::Service {
            return Err(FuncswError::NotServiceStage(node.node_id));
        }
        let mut spec = self.spec.clone();
        spec.nodes.push(node.clone());
        let v = self.revalidate(&spec)?;
        let d = v.descriptors.last().unwrap().clone();
        let factory = self.registry.resolve(&d.name, &d.version)?;
        let label = self.groups[&node.group_id].label.clone();
        if let (Some(req), Some(l)) = (&d.binding_requirement, &label) {
            if req != l {
                return Err(FuncswError::BindingConflict {
                    node: node.node_id,
                    detail: format!("requires {req:?}, group bound to {l:?}"),
                });
            }
        }
        self.nodes.push(NodeRuntime {
            body: factory(&node.config),
            label,
            ports: vec![None; node.inputs.len()],
            input_topics: v.input_topics.last().unwrap().clone(),
            descriptor: d,
            spec: node.clone(),
            state: LifecycleState::Created,
            restart_count: 0,
            stats: NodeStats::default(),
        });
        self.spec = spec;
        self.edges = v.edges;
        self.order = v.order;
        self.reindex();
        let i = self.nodes.len() - 1;
        if self.group_started(&node.group_id) {
            self.start_node(i)?;
        }
        Ok(())
    }

    /// Stops and removes a Service-stage node. Fails if another node still
    /// consumes its outputs.
    pub fn remove_node(&mut self, node_id: &str) -> Result<(), FuncswError> {
        let i = self.idx(node_id)?;
        if self.nodes[i].spec.stage != Stage::Service {
            return Err(FuncswError::NotServiceStage(node_id.to_string()));
        }
        let mut spec = self.spec.clone();
        spec.nodes.remove(i);
        if spec.nodes.is_empty() {
            return Err(FuncswError::EmptyGraph);
        }
        let v = self.revalidate(&spec)?;
        if matches!(
            self.nodes[i].state,
            LifecycleState::Running | LifecycleState::Failed
        ) {
            self.transition(i, LifecycleState::Stopped)?;
        }
        self.nodes.remove(i);
        self.spec = spec;
        self.edges = v.edges;
        self.order = v.order;
        self.reindex();
        Ok(())
    }

    /// Replaces a node's algorithm with a port-compatible one. Edges are
    /// unchanged; the node gets a fresh body and keeps its lifecycle state.
    pub fn swap_algorithm(
        &mut self,
        node_id: &str,
        algorithm: AlgorithmRef,
    ) -> Result<(), FuncswError> {
        let i = self.idx(node_id)?;
        let d = self
            .registry
            .descriptor(&algorithm.name, &algorithm.version)?
            .clone();
        let n = &self.nodes[i];
        check_ports(&n.spec, &d, &self.spec.topic_types, &n.input_topics)?;
        if let (Some(req), Some(l)) = (&d.binding_requirement, &n.label) {
            if req != l {
                return Err(FuncswError::BindingConflict {
                    node: node_id.to_string(),
                    detail: format!("requires {req:?}, group bound to {l:?}"),
                });
            }
        }
        let factory = self.registry.resolve(&d.name, &d.version)?;
        let n = &mut self.nodes[i];
        n.body = factory(&n.spec.config);
        n.descriptor = d;
        n.spec.algorithm = algorithm.clone();
        self.spec.nodes[i].algorithm = algorithm;
        Ok(())
    }
}
