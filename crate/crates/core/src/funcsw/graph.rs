//! Graph validation and ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::engine::TaskGraph;
use super::registry::{AlgorithmDescriptor, AlgorithmRegistry};
use super::{Edge, FuncswError, GraphSpec, NodeSpec, PortBinding};

/// Output of validation; everything the engine needs besides bodies.
#[derive(Debug, Clone)]
pub(crate) struct Validated {
    pub descriptors: Vec<AlgorithmDescriptor>,
    /// Resolved topic for every input port.
    pub input_topics: Vec<Vec<String>>,
    pub edges: Vec<Edge>,
    pub order: Vec<usize>,
}

/// Validates `spec` against `registry` and builds a graph with fresh bodies.
/// Every node starts `Created`.
pub fn build_graph(
    spec: GraphSpec,
    registry: Arc<AlgorithmRegistry>,
) -> Result<TaskGraph, FuncswError> {
    let v = validate(&spec, &registry)?;
    TaskGraph::from_validated(spec, registry, v)
}

/// Validates `spec` without building it.
pub fn check_graph(spec: &GraphSpec, registry: &AlgorithmRegistry) -> Result<(), FuncswError> {
    validate(spec, registry).map(|_| ())
}

pub(crate) fn check_ports(
    node: &NodeSpec,
    d: &AlgorithmDescriptor,
    topic_types: &BTreeMap<String, String>,
    input_topics: &[String],
) -> Result<(), FuncswError> {
    let mismatch = |detail: String| FuncswError::PortSchemaMismatch {
        node: node.node_id.clone(),
        detail,
    };
    if node.inputs.len() != d.required_inputs.len() {
        return Err(mismatch(format!(
            "{} input(s) wired, {} {} requires {}",
            node.inputs.len(),
            d.name,
            d.version,
            d.required_inputs.len()
        )));
    }
    if node.outputs.len() != d.outputs.len() {
        return Err(mismatch(format!(
            "{} output(s) declared, {} {} produces {}",
            node.outputs.len(),
            d.name,
            d.version,
            d.outputs.len()
        )));
    }
    let pairs = input_topics
        .iter()
        .zip(&d.required_inputs)
        .chain(node.outputs.iter().zip(&d.outputs));
    for (topic, port) in pairs {
        if let Some(t) = topic_types.get(topic) {
            if *t != port.type_name {
                return Err(mismatch(format!(
                    "port {:?} expects {:?} but topic {topic:?} carries {t:?}",
                    port.name, port.type_name
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn validate(
    spec: &GraphSpec,
    registry: &AlgorithmRegistry,
) -> Result<Validated, FuncswError> {
    if spec.nodes.is_empty() {
        return Err(FuncswError::EmptyGraph);
    }
    let mut index = BTreeMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        if index.insert(n.node_id.as_str(), i).is_some() {
            return Err(FuncswError::DuplicateNodeId(n.node_id.clone()));
        }
    }
    let groups: BTreeMap<&str, _> = spec
        .groups
        .iter()
        .map(|g| (g.group_id.as_str(), g))
        .collect();
    for n in &spec.nodes {
        if !groups.contains_key(n.group_id.as_str()) {
            return Err(FuncswError::UnknownGroup(n.group_id.clone()));
        }
        if n.watchdog_ms == 0 {
            return Err(FuncswError::InvalidNode {
                node: n.node_id.clone(),
                detail: "watchdog_ms must be positive".into(),
            });
        }
    }

    // producers
    let external: BTreeSet<&str> = spec.external_topics.iter().map(String::as_str).collect();
    let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        for t in &n.outputs {
            if external.contains(t.as_str()) {
                return Err(FuncswError::DuplicateProducer {
                    topic: t.clone(),
                    first: "<external>".into(),
                    second: n.node_id.clone(),
                });
            }
            if let Some(&j) = producer.get(t.as_str()) {
                return Err(FuncswError::DuplicateProducer {
                    topic: t.clone(),
                    first: spec.nodes[j].node_id.clone(),
                    second: n.node_id.clone(),
                });
            }
            producer.insert(t, i);
        }
    }

    // inputs
    let mut input_topics = Vec::with_capacity(spec.nodes.len());
    let mut edges = Vec::new();
    let mut adj: Vec<(usize, usize)> = Vec::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        let mut topics = Vec::with_capacity(n.inputs.len());
        for b in &n.inputs {
            let unresolved = |input: String| FuncswError::UnresolvedInput {
                node: n.node_id.clone(),
                input,
            };
            let topic = match b {
                PortBinding::Topic(t) => t.clone(),
                PortBinding::NodeOutput { node, port } => {
                    let j = *index
                        .get(node.as_str())
                        .ok_or_else(|| unresolved(format!("{node}[{port}]")))?;
                    spec.nodes[j]
                        .outputs
                        .get(*port)
                        .cloned()
                        .ok_or_else(|| unresolved(format!("{node}[{port}]")))?
                }
            };
            match producer.get(topic.as_str()) {
                Some(&j) => {
                    edges.push(Edge {
                        from: spec.nodes[j].node_id.clone(),
                        to: n.node_id.clone(),
                        topic: topic.clone(),
                    });
                    adj.push((j, i));
                }
                None if external.contains(topic.as_str()) => {}
                None => return Err(unresolved(topic)),
            }
            topics.push(topic);
        }
        input_topics.push(topics);
    }

    // algorithms, ports and binding requirements
    let mut descriptors = Vec::with_capacity(spec.nodes.len());
    for (i, n) in spec.nodes.iter().enumerate() {
        let d = registry.descriptor(&n.algorithm.name, &n.algorithm.version)?;
        check_ports(n, d, &spec.topic_types, &input_topics[i])?;
        if let (Some(req), Some(label)) = (
            &d.binding_requirement,
            &groups[n.group_id.as_str()].binding_label,
        ) {
            if req != label {
                return Err(FuncswError::BindingConflict {
                    node: n.node_id.clone(),
                    detail: format!("requires {req:?}, group bound to {label:?}"),
                });
            }
        }
        descriptors.push(d.clone());
    }

    let ids: Vec<&str> = spec.nodes.iter().map(|n| n.node_id.as_str()).collect();
    let order = topological_order(&ids, &adj).map_err(|cycle| FuncswError::CycleDetected {
        cycle: cycle.into_iter().map(|k| ids[k].to_string()).collect(),
    })?;

    for &(a, b) in &adj {
        let (sa, sb) = (spec.nodes[a].stage, spec.nodes[b].stage);
        if sa > sb {
            return Err(FuncswError::StageOrderViolation {
                from: ids[a].to_string(),
                from_stage: sa,
                to: ids[b].to_string(),
                to_stage: sb,
            });
        }
    }

    Ok(Validated {
        descriptors,
        input_topics,
        edges,
        order,
    })
}

/// Kahn's algorithm, always taking the lexicographically smallest ready id.
/// On a cycle, returns the node indices of one cycle, rotated to start at
/// its smallest id.
pub fn topological_order(ids: &[&str], edges: &[(usize, usize)]) -> Result<Vec<usize>, Vec<usize>> {
    let n = ids.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut ready: BTreeSet<(&str, usize)> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(|i| (ids[i], i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert((ids[j], j));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    Err(find_cycle(ids, &succ, &indeg))
}

fn find_cycle(ids: &[&str], succ: &[Vec<usize>], indeg: &[usize]) -> Vec<usize> {
    // every node left with indegree > 0 lies on or downstream of a cycle;
    // walking predecessors-in-the-remainder backwards must revisit a node
    let n = ids.len();
    let mut pred = vec![Vec::new(); n];
    for (a, ss) in succ.iter().enumerate() {
        for &b in ss {
            if indeg[a] > 0 && indeg[b] > 0 {
                pred[b].push(a);
            }
        }
    }
    for p in &mut pred {
        p.sort_by_key(|&k| ids[k]);
    }
    let start = (0..n)
        .filter(|&i| indeg[i] > 0)
        .min_by_key(|&i| ids[i])
        .unwrap();
    let mut pos = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut cur = start;
    while pos[cur] == usize::MAX {
        pos[cur] = walk.len();
        walk.push(cur);
        cur = pred[cur][0];
    }
    let mut cycle: Vec<usize> = walk[pos[cur]..].to_vec();
    cycle.reverse();
    let k = (0..cycle.len()).min_by_key(|&k| ids[cycle[k]]).unwrap();
    cycle.rotate_left(k);
    cycle
}
