//! Service-oriented communication layer: pub/sub and client/server over one
//! binding, per-topic QoS, zero-copy in-process delivery, a framed loopback
//! transport and broker-less discovery.

pub mod arena;
pub mod bench;
pub mod discovery;
pub mod domain;
pub mod qos;
pub mod wire;

use std::sync::Arc;

use thiserror::Error;

pub use arena::{Loan, Payload, SlotArena};
pub use discovery::{Descriptor, DiscoveryFilter, DiscoveryRecord, EntityKind, SimClock};
pub use domain::{
    endpoints_match, DeliveryMode, Domain, DomainConfig, LinkStats, Participant, Publisher,
    ServiceFault, ServiceHandle, Subscriber, SubscriberStats, TopicStats, Transport, WireEvent,
};
pub use qos::{
    qos_compatible, type_hash, validate_topic_name, Durability, History, QosProfile, Reliability,
    ServiceDescriptor, TopicDescriptor,
};
pub use wire::{Frame, FramingError, MsgType};

#[derive(Debug, Error)]
pub enum MiddlewareError {
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("invalid topic name {0:?}: expected [a-z0-9_/]+")]
    InvalidTopicName(String),
    #[error("invalid QoS: {0}")]
    InvalidQos(String),
    #[error("transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error(
        "type hash mismatch on {topic}: existing {existing:#018x}, requested {requested:#018x}"
    )]
    TypeHashMismatch {
        topic: String,
        existing: u64,
        requested: u64,
    },
    #[error("payload of {len} bytes exceeds limit of {limit}")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("all {0} arena slots are held by readers")]
    ArenaExhausted(usize),
    #[error("service {0:?} already registered")]
    DuplicateService(String),
    #[error("service {0:?} not found")]
    ServiceNotFound(String),
    #[error("call to {service:?} timed out after {timeout_ms} ms")]
    Timeout { service: String, timeout_ms: u64 },
    #[error("remote error {code}: {message}")]
    RemoteError { code: i32, message: String },
    #[error("participant is shut down")]
    ParticipantClosed,
    #[error(transparent)]
    Framing(#[from] FramingError),
}

pub type Result<T> = std::result::Result<T, MiddlewareError>;

/// An immutable published payload plus its metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub topic: Arc<str>,
    pub seq: u64,
    pub publisher_id: u64,
    pub timestamp_ns: u64,
    pub payload: Payload,
}
