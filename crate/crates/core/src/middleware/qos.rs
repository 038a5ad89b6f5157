use serde::{Deserialize, Serialize};

use super::MiddlewareError;
use crate::util::fnv1a64;

/// Ordered: `BestEffort < Reliable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reliability {
    BestEffort,
    Reliable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum History {
    KeepLast(u32),
    KeepAll,
}

impl History {
    /// Retention bound, `None` for unbounded.
    pub fn depth(self) -> Option<usize> {
        match self {
            History::KeepLast(n) => Some(n as usize),
            History::KeepAll => None,
        }
    }
}

/// Ordered: `Volatile < TransientLocal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Durability {
    Volatile,
    TransientLocal,
}

/// Per-topic delivery contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosProfile {
    pub reliability: Reliability,
    pub history: History,
    pub durability: Durability,
    #[serde(default)]
    pub deadline_ms: Option<u32>,
}

impl Default for QosProfile {
    fn default() -> Self {
        Self {
            reliability: Reliability::BestEffort,
            history: History::KeepLast(1),
            durability: Durability::Volatile,
            deadline_ms: None,
        }
    }
}

impl QosProfile {
    pub fn best_effort() -> Self {
        Self::default()
    }

    pub fn reliable() -> Self {
        Self {
            reliability: Reliability::Reliable,
            ..Self::default()
        }
    }

    pub fn keep_last(mut self, n: u32) -> Self {
        self.history = History::KeepLast(n);
        self
    }

    pub fn keep_all(mut self) -> Self {
        self.history = History::KeepAll;
        self
    }

    pub fn transient_local(mut self) -> Self {
        self.durability = Durability::TransientLocal;
        self
    }

    pub fn volatile(mut self) -> Self {
        self.durability = Durability::Volatile;
        self
    }

    pub fn deadline(mut self, ms: u32) -> Self {
        self.deadline_ms = Some(ms);
        self
    }

    pub fn validate(&self) -> Result<(), MiddlewareError> {
        if self.history == History::KeepLast(0) {
            return Err(MiddlewareError::InvalidQos(
                "KeepLast depth must be >= 1".into(),
            ));
        }
        if self.deadline_ms == Some(0) {
            return Err(MiddlewareError::InvalidQos(
                "deadline_ms must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Offered-covers-requested matching on reliability and durability.
/// History and deadline never block a match.
pub fn qos_compatible(offered: &QosProfile, requested: &QosProfile) -> bool {
    offered.reliability >= requested.reliability && offered.durability >= requested.durability
}

/// Content hash of a payload schema declaration.
pub fn type_hash(schema: &str) -> u64 {
    fnv1a64(schema.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicDescriptor {
    pub name: String,
    pub type_hash: u64,
    pub qos: QosProfile,
}

impl TopicDescriptor {
    pub fn new(name: impl Into<String>, type_hash: u64, qos: QosProfile) -> Self {
        Self {
            name: name.into(),
            type_hash,
            qos,
        }
    }

    pub fn validate(&self) -> Result<(), MiddlewareError> {
        validate_topic_name(&self.name)?;
        self.qos.validate()
    }
}

pub fn validate_topic_name(name: &str) -> Result<(), MiddlewareError> {
    let ok = !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'/');
    if ok {
        Ok(())
    } else {
        Err(MiddlewareError::InvalidTopicName(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub service_name: String,
    pub request_type_hash: u64,
    pub response_type_hash: u64,
}

impl ServiceDescriptor {
    pub fn new(name: impl Into<String>, request_type_hash: u64, response_type_hash: u64) -> Self {
        Self {
            service_name: name.into(),
            request_type_hash,
            response_type_hash,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stronger_offer_satisfies_weaker_request() {
        let offered = QosProfile::reliable().transient_local();
        assert!(qos_compatible(&offered, &QosProfile::best_effort()));
        assert!(!qos_compatible(
            &QosProfile::best_effort(),
            &QosProfile::reliable()
        ));
    }

    #[test]
    fn history_and_deadline_never_block() {
        let a = QosProfile::reliable().keep_last(1).deadline(5);
        let b = QosProfile::reliable().keep_all();
        assert!(qos_compatible(&a, &b));
        assert!(qos_compatible(&b, &a));
    }

    #[test]
    fn topic_names() {
        assert!(validate_topic_name("sensors/radar0").is_ok());
        assert!(validate_topic_name("a_b/c9").is_ok());
        for bad in ["", "Sensors", "a-b", "a b", "t.x"] {
            assert!(validate_topic_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn qos_validation() {
        assert!(QosProfile::default().keep_last(0).validate().is_err());
        assert!(QosProfile::default().deadline(0).validate().is_err());
        assert!(QosProfile::default()
            .keep_all()
            .deadline(1)
            .validate()
            .is_ok());
    }
}
