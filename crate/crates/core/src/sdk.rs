//! The surface applications build against. Nothing here exposes device
//! generation or normalization internals; devices are reached through the
//! [`Runtime`]'s observation and topic interfaces.

pub use crate::envmodel::{
    record_from_frame, EnvError, EnvRecord, EnvStore, OddQuery, RecordClass, RecordPatch,
};
pub use crate::funcsw::AlgorithmRef;
pub use crate::funcsw::{
    AlgorithmDescriptor, AlgorithmRegistry, ConfigMap, GraphSpec, GroupSpec, NodeBody, NodeFault,
    NodeSpec, PortBinding, PortSchema, RestartPolicy, Stage, StepContext, StepOutput,
};
pub use crate::hal::{AbstractFrame, Attributes, DeviceDescriptor, DeviceKind};
pub use crate::middleware::{Payload, Publisher, QosProfile, Sample, Subscriber, TopicDescriptor};
pub use crate::modemgr::{Action, FsmDefinition, Guard, ModeError, TransitionDef};
pub use crate::platform::{
    App, ConfigError, MetricsReport, Runtime, RuntimeError, ScheduledEvent, SystemConfig,
    TopicConfig,
};
