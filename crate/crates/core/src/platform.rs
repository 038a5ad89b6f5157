//! System assembly: the JSON system configuration, its cross-reference
//! validation, the round-based [`Runtime`] that drives every layer, and the
//! [`MetricsReport`].
//!
//! # Configuration
//!
//! One JSON object; unknown keys are rejected everywhere.
//!
//! | key          | content                                                        |
//! |--------------|----------------------------------------------------------------|
//! | `seed`       | run seed, mixed into every device seed (overridable from CLI)  |
//! | `period_ms`  | firing-round period, default 50                                |
//! | `devices`    | device descriptors; each publishes on `hal/<device_id>`        |
//! | `topics`     | `{name, type_name, qos}` middleware topics                     |
//! | `pipeline`   | the task graph: `nodes`, `groups`, `external_topics`, ...      |
//! | `algorithms` | `{name, version}` references the pipeline may use             |
//! | `fsms`       | mode-manager FSM definitions                                   |
//! | `odds`       | saved environment queries `{name, query}`                      |
//! | `schedule`   | timed FSM events `{at_s, fsm, event}`                          |
//! | `acc`        | application section, validated by the installed app            |
//!
//! # Rounds
//!
//! Each [`Runtime::step`] at time `t`: dispatches scheduled events due by `t`;
//! emits every device frame with timestamp ≤ `t` onto its topic; feeds the
//! pipeline's external topics from the middleware; runs one firing round;
//! publishes node outputs on declared topics; advances time by one period.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::envmodel::{record_from_frame, EnvError, EnvStore, OddDefinition};
use crate::funcsw::{
    build_graph, AlgorithmDescriptor, AlgorithmRef, AlgorithmRegistry, ConfigMap, FiringReport,
    FuncswError, GraphSpec, NodeFault, PortSchema, StepContext, StepOutput, TaskGraph,
};
use crate::hal::{
    normalize, AbstractFrame, Attributes, DeviceDescriptor, DeviceHandle, DeviceRegistry, HalError,
};
use crate::middleware::{
    type_hash, Domain, DomainConfig, MiddlewareError, Participant, Payload, Publisher, QosProfile,
    Subscriber, TopicDescriptor, Transport,
};
use crate::modemgr::{self, Coordinator, FsmDefinition, GroupHook, ModeError};
use crate::util::splitmix64;

/// Payload type name of device topics.
pub const FRAME_TYPE: &str = "AbstractFrame";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicConfig {
    pub name: String,
    pub type_name: String,
    #[serde(default)]
    pub qos: QosProfile,
}

impl TopicConfig {
    pub fn descriptor(&self) -> TopicDescriptor {
        TopicDescriptor::new(&self.name, type_hash(&self.type_name), self.qos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub at_s: f64,
    pub fsm: String,
    pub event: String,
}

fn default_period() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_period")]
    pub period_ms: f64,
    #[serde(default)]
    pub devices: Vec<DeviceDescriptor>,
    #[serde(default)]
    pub topics: Vec<TopicConfig>,
    pub pipeline: GraphSpec,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmRef>,
    #[serde(default)]
    pub fsms: Vec<FsmDefinition>,
    #[serde(default)]
    pub odds: Vec<OddDefinition>,
    #[serde(default)]
    pub schedule: Vec<ScheduledEvent>,
    #[serde(default)]
    pub acc: Option<serde_json::Value>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|_| ConfigError::NotFound(path.display().to_string()))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn device_topic(device_id: &str) -> String {
        format!("hal/{device_id}")
    }

    /// Every middleware topic: device topics followed by declared ones.
    pub fn topic_descriptors(&self) -> BTreeMap<String, TopicDescriptor> {
        let mut out = BTreeMap::new();
        for d in &self.devices {
            let name = Self::device_topic(&d.device_id);
            let qos = QosProfile::reliable().keep_last(16);
            out.insert(
                name.clone(),
                TopicDescriptor::new(name, type_hash(FRAME_TYPE), qos),
            );
        }
        for t in &self.topics {
            out.insert(t.name.clone(), t.descriptor());
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("device {id:?}: {source}")]
    Device { id: String, source: HalError },
    #[error("topic {0:?} declared twice (device topics are implicit)")]
    DuplicateTopic(String),
    #[error("topic {name:?}: {source}")]
    InvalidTopic {
        name: String,
        source: MiddlewareError,
    },
    #[error("{context} references undeclared topic {topic:?}")]
    UnknownTopic { context: String, topic: String },
    #[error("algorithm {name} {version} is not provided by any installed component")]
    UnknownAlgorithm { name: String, version: String },
    #[error("node {node:?} uses algorithm {name} {version}, which is not listed in `algorithms`")]
    UnlistedAlgorithm {
        node: String,
        name: String,
        version: String,
    },
    #[error("pipeline: {0}")]
    Pipeline(#[from] FuncswError),
    #[error("fsms: {0}")]
    Fsm(#[from] ModeError),
    #[error("schedule entry {index}: {detail}")]
    Schedule { index: usize, detail: String },
    #[error("odd {name:?}: {source}")]
    Odd { name: String, source: EnvError },
    #[error("period_ms must be positive, got {0}")]
    Period(f64),
    #[error("{0}")]
    App(String),
}

/// A component installed on top of the platform.
pub trait App {
    /// Checks the parts of the config the app owns.
    fn validate(&self, config: &SystemConfig) -> Result<(), ConfigError>;
    /// Registers the app's algorithms.
    fn install(
        &self,
        config: &SystemConfig,
        registry: &mut AlgorithmRegistry,
        env: &Arc<EnvStore>,
    ) -> Result<(), ConfigError>;
}

/// Registry holding the platform's own algorithms:
///
/// - `frame_check 1.0.0`: parses an AbstractFrame and passes the same buffer on.
/// - `env_ingest 1.0.0`: records each frame in the environment model; frames
///   the ingest table rejects are skipped. No outputs.
pub fn builtin_registry(env: &Arc<EnvStore>) -> AlgorithmRegistry {
    let mut r = AlgorithmRegistry::new();
    r.register_loader(
        "frame_check",
        |_: &ConfigMap| -> Box<dyn crate::funcsw::NodeBody> {
            Box::new(|ctx: &StepContext<'_>| {
                let p = &ctx.inputs[0];
                serde_json::from_slice::<AbstractFrame>(p)
                    .map_err(|e| NodeFault(format!("bad frame: {e}")))?;
                Ok(StepOutput::emit(vec![Some(p.clone())], 20))
            })
        },
    );
    let store = env.clone();
    r.register_loader(
        "env_ingest",
        move |_: &ConfigMap| -> Box<dyn crate::funcsw::NodeBody> {
            let store = store.clone();
            Box::new(move |ctx: &StepContext<'_>| {
                let frame: AbstractFrame = serde_json::from_slice(&ctx.inputs[0])
                    .map_err(|e| NodeFault(format!("bad frame: {e}")))?;
                match record_from_frame(&frame) {
                    Ok(rec) => {
                        store.insert(rec).map_err(|e| NodeFault(e.to_string()))?;
                    }
                    Err(EnvError::InvalidRecord(why)) => log::debug!("skipping frame: {why}"),
                    Err(e) => return Err(NodeFault(e.to_string())),
                }
                Ok(StepOutput::emit(vec![], 50))
            })
        },
    );
    let frame = || vec![PortSchema::new("frame", FRAME_TYPE)];
    for (name, entry, outputs) in [
        ("frame_check", "frame_check", frame()),
        ("env_ingest", "env_ingest", vec![]),
    ] {
        r.register_algorithm(AlgorithmDescriptor {
            name: name.into(),
            version: "1.0.0".into(),
            entry: entry.into(),
            required_inputs: frame(),
            outputs,
            binding_requirement: None,
        })
        .expect("builtin algorithms are distinct");
    }
    r
}

/// Checks every cross-reference of `config` against `registry`.
pub fn validate(config: &SystemConfig, registry: &AlgorithmRegistry) -> Result<(), ConfigError> {
    if !(config.period_ms > 0.0 && config.period_ms.is_finite()) {
        return Err(ConfigError::Period(config.period_ms));
    }
    let mut device_ids = BTreeSet::new();
    for d in &config.devices {
        d.validate().map_err(|source| ConfigError::Device {
            id: d.device_id.clone(),
            source,
        })?;
        if !device_ids.insert(d.device_id.as_str()) {
            return Err(ConfigError::Device {
                id: d.device_id.clone(),
                source: HalError::DuplicateDeviceId(d.device_id.clone()),
            });
        }
        let topic = SystemConfig::device_topic(&d.device_id);
        crate::middleware::validate_topic_name(&topic).map_err(|source| {
            ConfigError::InvalidTopic {
                name: topic,
                source,
            }
        })?;
    }
    let mut topics: BTreeSet<String> = config
        .devices
        .iter()
        .map(|d| SystemConfig::device_topic(&d.device_id))
        .collect();
    for t in &config.topics {
        t.descriptor()
            .validate()
            .map_err(|source| ConfigError::InvalidTopic {
                name: t.name.clone(),
                source,
            })?;
        if !topics.insert(t.name.clone()) {
            return Err(ConfigError::DuplicateTopic(t.name.clone()));
        }
    }
    for ext in &config.pipeline.external_topics {
        if !topics.contains(ext) {
            return Err(ConfigError::UnknownTopic {
                context: "pipeline.external_topics".into(),
                topic: ext.clone(),
            });
        }
    }
    for a in &config.algorithms {
        if registry.descriptor(&a.name, &a.version).is_err() {
            return Err(ConfigError::UnknownAlgorithm {
                name: a.name.clone(),
                version: a.version.clone(),
            });
        }
    }
    for n in &config.pipeline.nodes {
        if !config.algorithms.contains(&n.algorithm) {
            return Err(ConfigError::UnlistedAlgorithm {
                node: n.node_id.clone(),
                name: n.algorithm.name.clone(),
                version: n.algorithm.version.clone(),
            });
        }
    }
    // Graph structure, ports and groups.
    crate::funcsw::check_graph(&config.pipeline, registry)?;

    let groups: BTreeSet<String> = config
        .pipeline
        .groups
        .iter()
        .map(|g| g.group_id.clone())
        .collect();
    if !config.fsms.is_empty() {
        modemgr::validate(&config.fsms, &groups)?;
    }
    for (index, ev) in config.schedule.iter().enumerate() {
        if !(ev.at_s >= 0.0 && ev.at_s.is_finite()) {
            return Err(ConfigError::Schedule {
                index,
                detail: format!("time {} is not a non-negative number", ev.at_s),
            });
        }
        if !config.fsms.iter().any(|f| f.fsm_id == ev.fsm) {
            return Err(ConfigError::Schedule {
                index,
                detail: format!("unknown FSM {:?}", ev.fsm),
            });
        }
    }
    let probe = EnvStore::new();
    for o in &config.odds {
        probe
            .save_odd(&o.name, o.query.clone())
            .map_err(|source| ConfigError::Odd {
                name: o.name.clone(),
                source,
            })?;
    }
    Ok(())
}

/// Lets the mode manager start and stop pipeline groups.
struct GraphGroups(Arc<Mutex<TaskGraph>>);

impl GroupHook for GraphGroups {
    fn groups(&self) -> BTreeSet<String> {
        self.0
            .lock()
            .unwrap()
            .group_ids()
            .map(str::to_string)
            .collect()
    }

    fn start_group(&mut self, group: &str) -> Result<(), String> {
        self.0
            .lock()
            .unwrap()
            .start_group(group)
            .map_err(|e| e.to_string())
    }

    fn stop_group(&mut self, group: &str) -> Result<(), String> {
        self.0
            .lock()
            .unwrap()
            .stop_group(group)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Middleware(#[from] MiddlewareError),
    #[error(transparent)]
    Hal(#[from] HalError),
}

struct DeviceLink {
    handle: DeviceHandle,
    publisher: Publisher,
}

/// Every layer, assembled from one validated [`SystemConfig`].
pub struct Runtime {
    config: SystemConfig,
    config_hash: String,
    seed: u64,
    domain: Domain,
    participant: Participant,
    devices: DeviceRegistry,
    links: BTreeMap<String, DeviceLink>,
    observed: BTreeMap<String, Attributes>,
    inputs: BTreeMap<String, Subscriber>,
    outputs: BTreeMap<String, Publisher>,
    graph: Arc<Mutex<TaskGraph>>,
    env: Arc<EnvStore>,
    modes: Coordinator,
    schedule: VecDeque<(u64, String, String)>,
    period_ns: u64,
    now_ns: u64,
    rounds: u64,
    firing_log: Vec<String>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("seed", &self.seed)
            .field("now_ns", &self.now_ns)
            .field("rounds", &self.rounds)
            .finish_non_exhaustive()
    }
}

fn to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

impl Runtime {
    /// Validates `config` and assembles the stack. `seed` replaces the
    /// config's seed when given.
    pub fn new(
        config: SystemConfig,
        seed: Option<u64>,
        apps: &[&dyn App],
    ) -> Result<Self, ConfigError> {
        let config_hash = config.content_hash();
        let seed = seed.unwrap_or(config.seed);
        let env = Arc::new(EnvStore::new());
        let mut registry = builtin_registry(&env);
        for app in apps {
            app.validate(&config)?;
            app.install(&config, &mut registry, &env)?;
        }
        validate(&config, &registry)?;

        let domain = Domain::new(DomainConfig::default());
        let participant = domain
            .create_participant("platform", Transport::InProcess)
            .map_err(|e| ConfigError::App(e.to_string()))?;
        let descriptors = config.topic_descriptors();

        let mut devices = DeviceRegistry::new();
        let mut links = BTreeMap::new();
        for d in &config.devices {
            let mut d = d.clone();
            d.seed = splitmix64(d.seed ^ splitmix64(seed));
            let handle =
                devices
                    .register_device(d.clone())
                    .map_err(|source| ConfigError::Device {
                        id: d.device_id.clone(),
                        source,
                    })?;
            let topic = &descriptors[&SystemConfig::device_topic(&d.device_id)];
            let publisher = participant
                .create_publisher(topic.clone())
                .map_err(|source| ConfigError::InvalidTopic {
                    name: topic.name.clone(),
                    source,
                })?;
            links.insert(d.device_id.clone(), DeviceLink { handle, publisher });
        }

        let mut inputs = BTreeMap::new();
        for ext in &config.pipeline.external_topics {
            let sub = participant
                .create_subscriber(descriptors[ext].clone())
                .map_err(|source| ConfigError::InvalidTopic {
                    name: ext.clone(),
                    source,
                })?;
            inputs.insert(ext.clone(), sub);
        }
        let mut outputs = BTreeMap::new();
        for n in &config.pipeline.nodes {
            for t in &n.outputs {
                if let Some(desc) = descriptors.get(t) {
                    if !outputs.contains_key(t) {
                        let p = participant
                            .create_publisher(desc.clone())
                            .map_err(|source| ConfigError::InvalidTopic {
                                name: t.clone(),
                                source,
                            })?;
                        outputs.insert(t.clone(), p);
                    }
                }
            }
        }

        let mut graph = build_graph(config.pipeline.clone(), Arc::new(registry))?;
        graph.start()?;
        let graph = Arc::new(Mutex::new(graph));
        let modes = Coordinator::with_hook(Box::new(GraphGroups(graph.clone())));
        if !config.fsms.is_empty() {
            modes.load(config.fsms.clone())?;
        }
        for o in &config.odds {
            env.save_odd(&o.name, o.query.clone())
                .map_err(|source| ConfigError::Odd {
                    name: o.name.clone(),
                    source,
                })?;
        }
        let mut schedule: Vec<(u64, String, String)> = config
            .schedule
            .iter()
            .map(|e| (to_ns(e.at_s), e.fsm.clone(), e.event.clone()))
            .collect();
        // Stable: same-time events keep their declared order.
        schedule.sort_by_key(|e| e.0);
        let period_ns = (config.period_ms * 1e6).round().max(1.0) as u64;

        Ok(Self {
            config,
            config_hash,
            seed,
            domain,
            participant,
            devices,
            links,
            observed: BTreeMap::new(),
            inputs,
            outputs,
            graph,
            env,
            modes,
            schedule: schedule.into(),
            period_ns,
            now_ns: 0,
            rounds: 0,
            firing_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn participant(&self) -> &Participant {
        &self.participant
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn env(&self) -> &Arc<EnvStore> {
        &self.env
    }

    pub fn modes(&self) -> &Coordinator {
        &self.modes
    }

    /// Locked access to the task graph, e.g. for lifecycle inspection.
    pub fn graph(&self) -> std::sync::MutexGuard<'_, TaskGraph> {
        self.graph.lock().unwrap()
    }

    pub fn topic(&self, name: &str) -> Option<TopicDescriptor> {
        self.config.topic_descriptors().remove(name)
    }

    pub fn now_ns(&self) -> u64 {
        self.now_ns
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn firing_log(&self) -> &[String] {
        &self.firing_log
    }

    /// Ground truth a device reports from now on, in normalized keys.
    pub fn observe(&mut self, device_id: &str, values: Attributes) -> Result<(), RuntimeError> {
        if !self.links.contains_key(device_id) {
            return Err(HalError::UnknownDevice(device_id.to_string()).into());
        }
        self.observed.insert(device_id.to_string(), values);
        Ok(())
    }

    pub fn dispatch(
        &self,
        fsm: &str,
        event: &str,
    ) -> Result<modemgr::DispatchOutcome, RuntimeError> {
        Ok(self.modes.dispatch(fsm, event)?)
    }

    /// Runs one round; see the module docs for its phases.
    pub fn step(&mut self) -> Result<FiringReport, RuntimeError> {
        let t = self.now_ns;
        while self.schedule.front().is_some_and(|e| e.0 <= t) {
            let (_, fsm, event) = self.schedule.pop_front().unwrap();
            self.modes.dispatch(&fsm, &event)?;
        }

        for (id, link) in &self.links {
            let desc = self.devices.descriptor(link.handle)?;
            while desc.timestamp_ns(self.devices.next_seq(link.handle)?) <= t {
                let frame = match self.observed.get(id) {
                    Some(obs) => self.devices.tick_observing(link.handle, obs)?,
                    None => self.devices.tick(link.handle, 1)?.remove(0),
                };
                let abs = normalize(&frame)?;
                let bytes = serde_json::to_vec(&abs).expect("frame serializes");
                link.publisher.publish(&bytes)?;
            }
        }
        self.domain.spin();

        let mut ext: BTreeMap<String, Vec<Payload>> = BTreeMap::new();
        for (topic, sub) in &self.inputs {
            let samples = sub.take(usize::MAX);
            if !samples.is_empty() {
                ext.insert(
                    topic.clone(),
                    samples.into_iter().map(|s| s.payload).collect(),
                );
            }
        }
        let report = self.graph.lock().unwrap().step(&ext);
        for (topic, payload) in &report.outputs {
            if let Some(p) = self.outputs.get(topic) {
                p.publish_shared(payload.clone())?;
            }
        }
        self.domain.spin();
        self.firing_log.push(report.to_json());
        self.domain.advance(self.period_ns);
        self.now_ns += self.period_ns;
        self.rounds += 1;
        Ok(report)
    }

    /// Runs whole rounds covering `duration_s`.
    pub fn run_for(&mut self, duration_s: f64) -> Result<(), RuntimeError> {
        let rounds = (to_ns(duration_s) / self.period_ns).max(1);
        for _ in 0..rounds {
            self.step()?;
        }
        Ok(())
    }

    pub fn report(&self, acc: Option<serde_json::Value>, fault: Option<String>) -> MetricsReport {
        let topics = self
            .domain
            .topic_stats()
            .into_iter()
            .map(|(k, s)| {
                (
                    k,
                    TopicMetrics {
                        samples: s.published,
                        delivered: s.delivered,
                        dropped: s.evicted + s.lost,
                        deadline_missed: s.deadline_missed,
                    },
                )
            })
            .collect();
        let graph = self.graph.lock().unwrap();
        let nodes = graph
            .stats()
            .into_iter()
            .map(|(k, s)| {
                let state = format!("{:?}", graph.state(&k).expect("node exists"));
                (
                    k,
                    NodeMetrics {
                        fired: s.fired,
                        failures: s.failures,
                        restarts: s.restarts,
                        max_latency_us: s.max_elapsed_us,
                        state,
                    },
                )
            })
            .collect();
        let odds = self
            .env
            .odd_names()
            .into_iter()
            .map(|n| {
                let hits = self.env.run_odd(&n).map(|r| r.len()).unwrap_or(0);
                (n, hits)
            })
            .collect();
        MetricsReport {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            rounds: self.rounds,
            sim_time_s: self.now_ns as f64 / 1e9,
            topics,
            nodes,
            fsm: FsmMetrics {
                trace_len: self.modes.trace().len(),
                final_mode: (*self.modes.snapshot()).clone(),
            },
            env: EnvMetrics {
                records: self.env.len(),
                odds,
            },
            acc,
            fault,
        }
    }

    /// Mode-manager trace as JSON lines.
    pub fn fsm_trace_lines(&self) -> Vec<String> {
        self.modes.trace().iter().map(|t| t.to_json()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub samples: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub deadline_missed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub fired: u64,
    pub failures: u64,
    pub restarts: u32,
    pub max_latency_us: u64,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmMetrics {
    pub trace_len: usize,
    pub final_mode: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub records: usize,
    pub odds: BTreeMap<String, usize>,
}

/// Run summary. Contains no wall-clock quantities, so equal (config, seed)
/// pairs give equal reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    pub rounds: u64,
    pub sim_time_s: f64,
    pub topics: BTreeMap<String, TopicMetrics>,
    pub nodes: BTreeMap<String, NodeMetrics>,
    pub fsm: FsmMetrics,
    pub env: EnvMetrics,
    pub acc: Option<serde_json::Value>,
    pub fault: Option<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
