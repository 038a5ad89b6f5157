//! Adaptive cruise control, built only on [`crate::sdk`].
//!
//! The lead vehicle is seen through the whole stack each step:
//!
//! ```text
//! world ──observe──▶ radar device ──hal/<radar>──▶ radar_acq ──▶ lead_tracker
//!   (envmodel Object record, queried back) ──env/lead──▶ acc_planner
//!   ◀──acc/command── acc_controller ◀──acc/target──┘
//! ```
//!
//! The planner computes the unsaturated law
//! `kp·(gap − desired_gap(v_ego)) + kv·(v_lead − v_ego)`; the controller
//! clamps it to `[accel_min, accel_max]`. Control runs only while the ADS
//! FSM has started the `control` group.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sdk::{
    record_from_frame, AbstractFrame, Action, AlgorithmDescriptor, AlgorithmRef, AlgorithmRegistry,
    App, Attributes, ConfigError, ConfigMap, DeviceDescriptor, DeviceKind, EnvError, EnvStore,
    FsmDefinition, GraphSpec, GroupSpec, Guard, NodeBody, NodeFault, NodeSpec, OddQuery,
    PortBinding, PortSchema, QosProfile, RecordClass, RecordPatch, RestartPolicy, Runtime,
    ScheduledEvent, Stage, StepContext, StepOutput, SystemConfig, TopicConfig, TransitionDef,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    #[serde(default)]
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccConfig {
    pub standstill_gap: f64,
    pub time_headway: f64,
    pub kp: f64,
    pub kv: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl Default for AccConfig {
    fn default() -> Self {
        Self {
            standstill_gap: 2.0,
            time_headway: 1.5,
            kp: 0.18,
            kv: 0.8,
            accel_min: -3.5,
            accel_max: 2.0,
        }
    }
}

impl AccConfig {
    pub fn validate(&self) -> Result<(), AccError> {
        let ok = self.standstill_gap > 0.0
            && self.time_headway > 0.0
            && self.accel_min < 0.0
            && self.accel_max > 0.0
            && self.kp.is_finite()
            && self.kv.is_finite();
        if ok {
            Ok(())
        } else {
            Err(AccError::InvalidConfig(format!("{self:?}")))
        }
    }

    fn with_overrides(mut self, cfg: &ConfigMap) -> Self {
        let get = |k: &str| cfg.get(k).and_then(|v| v.as_f64());
        for (k, slot) in [
            ("standstill_gap", &mut self.standstill_gap),
            ("time_headway", &mut self.time_headway),
            ("kp", &mut self.kp),
            ("kv", &mut self.kv),
            ("accel_min", &mut self.accel_min),
            ("accel_max", &mut self.accel_max),
        ] {
            if let Some(v) = get(k) {
                *slot = v;
            }
        }
        self
    }
}

/// Lead speed `speed` applies from `t_start` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSegment {
    pub t_start: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub ego: VehicleState,
    pub lead: VehicleState,
    pub lead_profile: Vec<ProfileSegment>,
    pub dt: f64,
    pub duration: f64,
}

impl Scenario {
    /// Lead step 25 → 15 m/s at 10 s, ego at 25 m/s on the desired gap.
    pub fn lead_brake_step(cfg: &AccConfig) -> Self {
        Self {
            ego: VehicleState {
                position: 0.0,
                speed: 25.0,
                accel: 0.0,
            },
            lead: VehicleState {
                position: desired_gap(cfg, 25.0),
                speed: 25.0,
                accel: 0.0,
            },
            lead_profile: vec![
                ProfileSegment {
                    t_start: 0.0,
                    speed: 25.0,
                },
                ProfileSegment {
                    t_start: 10.0,
                    speed: 15.0,
                },
            ],
            dt: 0.05,
            duration: 120.0,
        }
    }

    pub fn validate(&self) -> Result<(), AccError> {
        let bad = |m: &str| Err(AccError::InvalidScenario(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be non-negative");
        }
        if self.lead.position <= self.ego.position {
            return bad("lead must start ahead of ego");
        }
        if self.ego.speed < 0.0 || self.lead.speed < 0.0 {
            return bad("speeds must be non-negative");
        }
        if self
            .lead_profile
            .iter()
            .any(|s| s.speed < 0.0 || !s.t_start.is_finite())
        {
            return bad("profile speeds must be non-negative");
        }
        if self
            .lead_profile
            .windows(2)
            .any(|w| w[1].t_start < w[0].t_start)
        {
            return bad("profile segments must be ordered by t_start");
        }
        Ok(())
    }

    /// Lead speed commanded at `t`; before the first segment the initial
    /// speed holds.
    pub fn lead_speed_at(&self, t: f64) -> f64 {
        self.lead_profile
            .iter()
            .rev()
            .find(|s| s.t_start <= t)
            .map_or(self.lead.speed, |s| s.speed)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

pub fn desired_gap(cfg: &AccConfig, ego_speed: f64) -> f64 {
    cfg.standstill_gap + cfg.time_headway * ego_speed
}

fn unsaturated(cfg: &AccConfig, gap: f64, v_ego: f64, range_rate: f64) -> f64 {
    cfg.kp * (gap - desired_gap(cfg, v_ego)) + cfg.kv * range_rate
}

pub fn acc_command(cfg: &AccConfig, gap: f64, v_ego: f64, v_lead: f64) -> f64 {
    unsaturated(cfg, gap, v_ego, v_lead - v_ego).clamp(cfg.accel_min, cfg.accel_max)
}

/// One semi-implicit Euler step: speed first (clamped at 0), then position.
pub fn integrate(state: &mut VehicleState, accel: f64, dt: f64) {
    state.accel = accel;
    state.speed = (state.speed + accel * dt).max(0.0);
    state.position += state.speed * dt;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub ego: VehicleState,
    pub lead: VehicleState,
    pub gap: f64,
    pub command: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccSummary {
    pub steps: usize,
    pub final_gap_error_m: f64,
    pub min_gap_m: f64,
    pub collision_at_s: Option<f64>,
}

impl Trajectory {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            s.push_str(&serde_json::to_string(p).expect("point serializes"));
            s.push('\n');
        }
        s
    }

    pub fn min_gap(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.gap)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn summary(&self, cfg: &AccConfig, collision_at_s: Option<f64>) -> AccSummary {
        let final_gap_error_m = self
            .points
            .last()
            .map_or(0.0, |p| (p.gap - desired_gap(cfg, p.ego.speed)).abs());
        AccSummary {
            steps: self.points.len().saturating_sub(1),
            final_gap_error_m,
            min_gap_m: self.min_gap(),
            collision_at_s,
        }
    }
}

#[derive(Debug, Error)]
pub enum AccError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid ACC config: {0}")]
    InvalidConfig(String),
    #[error("collision at t = {t:.2} s (gap {gap:.3} m)")]
    Collision {
        t: f64,
        gap: f64,
        trajectory: Trajectory,
    },
    #[error("config has no `acc` section")]
    NotConfigured,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime: {0}")]
    Runtime(String),
}

fn default_radar() -> String {
    "front_radar".into()
}
fn default_speed_topic() -> String {
    "vehicle/speed".into()
}
fn default_command_topic() -> String {
    "acc/command".into()
}

/// The `acc` section of the system configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccSection {
    pub scenario: Scenario,
    #[serde(default)]
    pub config: AccConfig,
    #[serde(default = "default_radar")]
    pub radar_device: String,
    #[serde(default = "default_speed_topic")]
    pub speed_topic: String,
    #[serde(default = "default_command_topic")]
    pub command_topic: String,
}

impl AccSection {
    pub fn from_config(config: &SystemConfig) -> Result<Option<Self>, ConfigError> {
        config
            .acc
            .as_ref()
            .map(|v| {
                serde_json::from_value(v.clone()).map_err(|e| ConfigError::App(format!("acc: {e}")))
            })
            .transpose()
    }
}

fn f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64s(bytes: &[u8], n: usize) -> Result<Vec<f64>, NodeFault> {
    if bytes.len() != 8 * n {
        return Err(NodeFault(format!(
            "expected {} bytes, got {}",
            8 * n,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Lead-object tracker: keeps one envmodel record for the radar lead target
/// and emits `[range_m, range_rate_mps]` read back from the store.
fn lead_tracker(
    env: Arc<EnvStore>,
) -> impl FnMut(&StepContext<'_>) -> Result<StepOutput, NodeFault> {
    let track: Mutex<Option<u64>> = Mutex::new(None);
    move |ctx| {
        let frame: AbstractFrame = serde_json::from_slice(&ctx.inputs[0])
            .map_err(|e| NodeFault(format!("bad frame: {e}")))?;
        let rec = match record_from_frame(&frame) {
            Ok(r) => r,
            Err(EnvError::InvalidRecord(_)) => return Ok(StepOutput::emit(vec![None], 40)),
            Err(e) => return Err(NodeFault(e.to_string())),
        };
        let ts = rec.timestamp_ns;
        let mut track = track.lock().unwrap();
        let patch = RecordPatch {
            timestamp_ns: Some(rec.timestamp_ns),
            position: Some(rec.position),
            attributes: Some(rec.attributes.clone()),
            ..RecordPatch::default()
        };
        let updated = match *track {
            Some(id) => match env.update(id, patch) {
                Ok(_) => true,
                Err(EnvError::NotFound(_)) => false,
                Err(e) => return Err(NodeFault(e.to_string())),
            },
            None => false,
        };
        if !updated {
            *track = Some(env.insert(rec).map_err(|e| NodeFault(e.to_string()))?);
        }
        let q = OddQuery {
            tokens: vec!["lead".into(), "vehicle".into()],
            class_filter: Some(RecordClass::Object),
            time_range: Some((ts, ts)),
        };
        let hits = env.query(&q).map_err(|e| NodeFault(e.to_string()))?;
        let Some(lead) = hits.iter().find(|r| Some(r.record_id) == *track) else {
            return Err(NodeFault("lead record vanished".into()));
        };
        let attr = |k: &str| {
            lead.attributes
                .get(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| NodeFault(format!("lead record lacks {k}")))
        };
        let out = f64s(&[attr("range_m")?, attr("range_rate_mps")?]);
        Ok(StepOutput::emit(vec![Some(out.into())], 60))
    }
}

fn acc_algorithms() -> Vec<AlgorithmDescriptor> {
    let port = |n: &str, t: &str| PortSchema::new(n, t);
    vec![
        AlgorithmDescriptor {
            name: "lead_tracker".into(),
            version: "1.0.0".into(),
            entry: "acc.lead_tracker".into(),
            required_inputs: vec![port("frame", "AbstractFrame")],
            outputs: vec![port("lead", "LeadObject")],
            binding_requirement: None,
        },
        AlgorithmDescriptor {
            name: "acc_planner".into(),
            version: "1.0.0".into(),
            entry: "acc.planner".into(),
            required_inputs: vec![port("lead", "LeadObject"), port("speed", "Speed")],
            outputs: vec![port("target", "Accel")],
            binding_requirement: None,
        },
        AlgorithmDescriptor {
            name: "acc_controller".into(),
            version: "1.0.0".into(),
            entry: "acc.controller".into(),
            required_inputs: vec![port("target", "Accel")],
            outputs: vec![port("command", "Accel")],
            binding_requirement: Some("control-unit".into()),
        },
    ]
}

/// Installs the ACC algorithms and checks the `acc` section.
#[derive(Debug, Clone, Copy, Default)]
pub struct AccApp;

impl App for AccApp {
    fn validate(&self, config: &SystemConfig) -> Result<(), ConfigError> {
        let Some(sec) = AccSection::from_config(config)? else {
            return Ok(());
        };
        let app = |m: String| ConfigError::App(format!("acc: {m}"));
        sec.scenario.validate().map_err(|e| app(e.to_string()))?;
        sec.config.validate().map_err(|e| app(e.to_string()))?;
        let dt = sec.scenario.dt;
        let Some(radar) = config
            .devices
            .iter()
            .find(|d| d.device_id == sec.radar_device)
        else {
            return Err(app(format!(
                "radar device {:?} is not declared",
                sec.radar_device
            )));
        };
        if radar.kind != DeviceKind::Radar {
            return Err(app(format!(
                "device {:?} is a {:?}, not a Radar",
                radar.device_id, radar.kind
            )));
        }
        if (radar.rate_hz * dt - 1.0).abs() > 1e-9 {
            return Err(app(format!(
                "radar {:?} runs at {} Hz but the scenario step needs {} Hz",
                radar.device_id,
                radar.rate_hz,
                1.0 / dt
            )));
        }
        if (config.period_ms - dt * 1000.0).abs() > 1e-9 {
            return Err(app(format!(
                "period_ms {} differs from the scenario step {} ms",
                config.period_ms,
                dt * 1000.0
            )));
        }
        for t in [&sec.speed_topic, &sec.command_topic] {
            if !config.topics.iter().any(|c| &c.name == t) {
                return Err(app(format!("topic {t:?} is not declared")));
            }
        }
        if !config.pipeline.external_topics.contains(&sec.speed_topic) {
            return Err(app(format!(
                "topic {:?} must be a pipeline external topic",
                sec.speed_topic
            )));
        }
        Ok(())
    }

    fn install(
        &self,
        config: &SystemConfig,
        registry: &mut AlgorithmRegistry,
        env: &Arc<EnvStore>,
    ) -> Result<(), ConfigError> {
        let base = AccSection::from_config(config)?
            .map(|s| s.config)
            .unwrap_or_default();
        let env = env.clone();
        registry.register_loader(
            "acc.lead_tracker",
            move |_: &ConfigMap| -> Box<dyn NodeBody> { Box::new(lead_tracker(env.clone())) },
        );
        registry.register_loader("acc.planner", move |_: &ConfigMap| -> Box<dyn NodeBody> {
            Box::new(move |ctx: &StepContext<'_>| {
                let cfg = base.with_overrides(ctx.config);
                let lead = read_f64s(&ctx.inputs[0], 2)?;
                let v_ego = read_f64s(&ctx.inputs[1], 1)?[0];
                let target = unsaturated(&cfg, lead[0], v_ego, lead[1]);
                Ok(StepOutput::emit(vec![Some(f64s(&[target]).into())], 80))
            })
        });
        registry.register_loader(
            "acc.controller",
            move |_: &ConfigMap| -> Box<dyn NodeBody> {
                Box::new(move |ctx: &StepContext<'_>| {
                    let cfg = base.with_overrides(ctx.config);
                    let target = read_f64s(&ctx.inputs[0], 1)?[0];
                    let cmd = target.clamp(cfg.accel_min, cfg.accel_max);
                    Ok(StepOutput::emit(vec![Some(f64s(&[cmd]).into())], 30))
                })
            },
        );
        for d in acc_algorithms() {
            registry
                .register_algorithm(d)
                .map_err(ConfigError::Pipeline)?;
        }
        Ok(())
    }
}

fn node(
    id: &str,
    stage: Stage,
    inputs: &[&str],
    outputs: &[&str],
    group: &str,
    alg: &str,
) -> NodeSpec {
    NodeSpec {
        node_id: id.into(),
        stage,
        inputs: inputs
            .iter()
            .map(|s| PortBinding::Topic(s.to_string()))
            .collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        group_id: group.into(),
        algorithm: AlgorithmRef::new(alg, "1.0.0"),
        config: ConfigMap::new(),
        config_modes: BTreeMap::new(),
        watchdog_ms: 10,
    }
}

fn transition(
    from: &str,
    event: &str,
    guard: Option<Guard>,
    to: &str,
    actions: Vec<Action>,
) -> TransitionDef {
    TransitionDef {
        from: from.into(),
        event: event.into(),
        guard,
        to: to.into(),
        actions,
    }
}

/// The ADS and health FSMs driving the ACC groups.
pub fn ads_fsms() -> Vec<FsmDefinition> {
    let ok = || Some(Guard::all(&[("health", "Ok")]));
    let start = |g: &str| Action::StartGroup(g.into());
    let stop = |g: &str| Action::StopGroup(g.into());
    vec![
        FsmDefinition {
            fsm_id: "ads".into(),
            states: ["Off", "Standby", "Active", "Fallback"]
                .map(String::from)
                .to_vec(),
            initial: "Off".into(),
            transitions: vec![
                transition(
                    "Off",
                    "driver_engage",
                    ok(),
                    "Standby",
                    vec![start("perception"), start("planning")],
                ),
                transition(
                    "Standby",
                    "activate",
                    ok(),
                    "Active",
                    vec![start("control")],
                ),
                transition(
                    "Active",
                    "fallback",
                    None,
                    "Fallback",
                    vec![stop("control")],
                ),
                transition(
                    "Active",
                    "health_lost",
                    None,
                    "Fallback",
                    vec![stop("control")],
                ),
                transition("Standby", "health_lost", None, "Fallback", vec![]),
                transition(
                    "Fallback",
                    "driver_disengage",
                    None,
                    "Off",
                    vec![stop("planning"), stop("perception")],
                ),
            ],
        },
        FsmDefinition {
            fsm_id: "health".into(),
            states: ["Ok", "Fault"].map(String::from).to_vec(),
            initial: "Ok".into(),
            transitions: vec![
                transition(
                    "Ok",
                    "fault",
                    None,
                    "Fault",
                    vec![Action::EmitEvent {
                        target: "ads".into(),
                        event: "health_lost".into(),
                    }],
                ),
                transition("Fault", "recover", None, "Ok", vec![]),
            ],
        },
    ]
}

/// Minimal system running the ACC pipeline for `scenario`.
pub fn acc_system(scenario: &Scenario, cfg: &AccConfig, seed: u64) -> SystemConfig {
    let topic = |name: &str, ty: &str| TopicConfig {
        name: name.into(),
        type_name: ty.into(),
        qos: QosProfile::reliable().keep_last(1),
    };
    let mut planner = node(
        "acc_planner",
        Stage::Service,
        &["env/lead", "vehicle/speed"],
        &["acc/target"],
        "planning",
        "acc_planner",
    );
    let mut controller = node(
        "acc_control",
        Stage::Service,
        &["acc/target"],
        &["acc/command"],
        "control",
        "acc_controller",
    );
    let gains = serde_json::to_value(cfg).expect("config serializes");
    for (k, v) in gains.as_object().expect("struct") {
        planner.config.insert(k.clone(), v.clone());
        controller.config.insert(k.clone(), v.clone());
    }
    let group = |id: &str, label: Option<&str>, policy| GroupSpec {
        group_id: id.into(),
        binding_label: label.map(String::from),
        restart_policy: policy,
        autostart: false,
    };
    let section = AccSection {
        scenario: scenario.clone(),
        config: *cfg,
        radar_device: default_radar(),
        speed_topic: default_speed_topic(),
        command_topic: default_command_topic(),
    };
    SystemConfig {
        seed,
        period_ms: scenario.dt * 1000.0,
        devices: vec![DeviceDescriptor::new(
            "front_radar",
            DeviceKind::Radar,
            1.0 / scenario.dt,
            7,
        )
        .with_binding("ai-unit")],
        topics: vec![
            topic("perception/radar", "AbstractFrame"),
            topic("env/lead", "LeadObject"),
            topic("vehicle/speed", "Speed"),
            topic("acc/target", "Accel"),
            topic("acc/command", "Accel"),
        ],
        pipeline: GraphSpec {
            nodes: vec![
                node(
                    "radar_acq",
                    Stage::Acquisition,
                    &["hal/front_radar"],
                    &["perception/radar"],
                    "perception",
                    "frame_check",
                ),
                node(
                    "lead_tracker",
                    Stage::PreProcessing,
                    &["perception/radar"],
                    &["env/lead"],
                    "perception",
                    "lead_tracker",
                ),
                planner,
                controller,
            ],
            groups: vec![
                group("perception", Some("ai-unit"), RestartPolicy::UpTo(3)),
                group("planning", None, RestartPolicy::UpTo(3)),
                group("control", Some("control-unit"), RestartPolicy::Never),
            ],
            external_topics: vec!["hal/front_radar".into(), "vehicle/speed".into()],
            topic_types: [
                ("perception/radar", "AbstractFrame"),
                ("env/lead", "LeadObject"),
                ("vehicle/speed", "Speed"),
                ("acc/target", "Accel"),
                ("acc/command", "Accel"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        },
        algorithms: [
            "frame_check",
            "lead_tracker",
            "acc_planner",
            "acc_controller",
        ]
        .into_iter()
        .map(|n| AlgorithmRef::new(n, "1.0.0"))
        .collect(),
        fsms: ads_fsms(),
        odds: vec![],
        schedule: vec![
            ScheduledEvent {
                at_s: 0.0,
                fsm: "ads".into(),
                event: "driver_engage".into(),
            },
            ScheduledEvent {
                at_s: 0.0,
                fsm: "ads".into(),
                event: "activate".into(),
            },
        ],
        acc: Some(serde_json::to_value(section).expect("section serializes")),
    }
}

/// Closed-loop run of the configured scenario on `runtime`, for
/// `duration_s` (default: the scenario's duration).
///
/// Each step observes the world through the radar, publishes the ego speed,
/// runs one firing round and applies the command received (0 when control is
/// not running). A gap ≤ 0 halts the run with [`AccError::Collision`].
pub fn run(runtime: &mut Runtime, duration_s: Option<f64>) -> Result<Trajectory, AccError> {
    let sec = AccSection::from_config(runtime.config())?.ok_or(AccError::NotConfigured)?;
    let sc = &sec.scenario;
    let rt_err = |e: &dyn std::fmt::Display| AccError::Runtime(e.to_string());
    let speed_topic = runtime
        .topic(&sec.speed_topic)
        .ok_or_else(|| rt_err(&"speed topic missing"))?;
    let cmd_topic = runtime
        .topic(&sec.command_topic)
        .ok_or_else(|| rt_err(&"command topic missing"))?;
    let speed_pub = runtime
        .participant()
        .create_publisher(speed_topic)
        .map_err(|e| rt_err(&e))?;
    let cmd_sub = runtime
        .participant()
        .create_subscriber(cmd_topic)
        .map_err(|e| rt_err(&e))?;

    let steps = duration_s.map_or(sc.steps(), |d| (d / sc.dt).round() as usize);
    let mut ego = sc.ego;
    let mut lead = sc.lead;
    let mut traj = Trajectory::default();
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        let gap = lead.position - ego.position;
        let obs: Attributes = [
            ("range_m", gap),
            ("range_rate_mps", lead.speed - ego.speed),
            ("azimuth_rad", 0.0),
            ("target_valid", 1.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        runtime
            .observe(&sec.radar_device, obs)
            .map_err(|e| rt_err(&e))?;
        speed_pub
            .publish(&f64s(&[ego.speed]))
            .map_err(|e| rt_err(&e))?;
        runtime.step().map_err(|e| rt_err(&e))?;
        let command = cmd_sub
            .take(usize::MAX)
            .last()
            .map(|s| read_f64s(&s.payload, 1).map(|v| v[0]))
            .transpose()
            .map_err(|e| rt_err(&e.0))?
            .unwrap_or(0.0);
        traj.points.push(TrajectoryPoint {
            t,
            ego,
            lead,
            gap,
            command,
        });
        if k == steps {
            break;
        }
        integrate(&mut ego, command, sc.dt);
        let v_lead = sc.lead_speed_at(t);
        lead.accel = (v_lead - lead.speed) / sc.dt;
        lead.speed = v_lead;
        lead.position += lead.speed * sc.dt;
        let gap = lead.position - ego.position;
        if gap <= 0.0 {
            let t = (k + 1) as f64 * sc.dt;
            traj.points.push(TrajectoryPoint {
                t,
                ego,
                lead,
                gap,
                command: 0.0,
            });
            return Err(AccError::Collision {
                t,
                gap,
                trajectory: traj,
            });
        }
    }
    Ok(traj)
}

/// Runs `scenario` through the full stack built by [`acc_system`].
pub fn simulate(scenario: &Scenario, cfg: &AccConfig) -> Result<Trajectory, AccError> {
    scenario.validate()?;
    cfg.validate()?;
    let mut rt = Runtime::new(acc_system(scenario, cfg, 0), None, &[&AccApp])?;
    run(&mut rt, None)
}
