//! Broker-less discovery: every participant keeps its own cache built from
//! ANNOUNCE and HEARTBEAT frames seen on its segment.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use super::qos::{ServiceDescriptor, TopicDescriptor};
use super::wire::{Announce, AnnounceKind, Frame, FramingError, MsgType};

/// Simulated monotonic clock in nanoseconds, shared by a domain.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ns(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn advance(&self, ns: u64) -> u64 {
        self.0.fetch_add(ns, Ordering::SeqCst) + ns
    }

    pub fn set(&self, ns: u64) {
        self.0.store(ns, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EntityKind {
    Participant,
    Publisher,
    Subscriber,
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Descriptor {
    Participant { name: String },
    Topic(TopicDescriptor),
    Service(ServiceDescriptor),
}

impl Descriptor {
    pub fn name(&self) -> &str {
        match self {
            Descriptor::Participant { name } => name,
            Descriptor::Topic(t) => &t.name,
            Descriptor::Service(s) => &s.service_name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscoveryRecord {
    pub entity: EntityKind,
    pub participant_id: u64,
    pub entity_id: u32,
    pub descriptor: Descriptor,
    pub liveliness_deadline_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryFilter {
    /// Publishers and subscribers.
    Topics,
    Services,
    /// Everything, including participant records.
    All,
}

impl DiscoveryFilter {
    fn admits(self, kind: EntityKind) -> bool {
        match self {
            DiscoveryFilter::Topics => {
                matches!(kind, EntityKind::Publisher | EntityKind::Subscriber)
            }
            DiscoveryFilter::Services => kind == EntityKind::Service,
            DiscoveryFilter::All => true,
        }
    }
}

#[derive(Debug, Clone)]
struct PeerEntry {
    last_heartbeat_ns: u64,
    entities: BTreeMap<u32, (EntityKind, Descriptor)>,
}

/// Liveliness-aware view of a segment as seen by one participant.
#[derive(Debug, Clone)]
pub struct DiscoveryCache {
    lease_ns: u64,
    peers: BTreeMap<u64, PeerEntry>,
}

impl DiscoveryCache {
    /// `lease_ns` is the liveliness window (3 heartbeat periods).
    pub fn new(lease_ns: u64) -> Self {
        Self {
            lease_ns,
            peers: BTreeMap::new(),
        }
    }

    /// Applies a decoded discovery frame received at `now_ns`.
    pub fn apply(&mut self, frame: &Frame, now_ns: u64) -> Result<(), FramingError> {
        match frame.msg_type {
            MsgType::Heartbeat if frame.entity_id == 0 => {
                if let Some(p) = self.peers.get_mut(&frame.participant_id) {
                    p.last_heartbeat_ns = p.last_heartbeat_ns.max(now_ns);
                }
                Ok(())
            }
            MsgType::Announce => {
                let a = Announce::decode(&frame.payload)?;
                let peer = self
                    .peers
                    .entry(frame.participant_id)
                    .or_insert_with(|| PeerEntry {
                        last_heartbeat_ns: now_ns,
                        entities: BTreeMap::new(),
                    });
                peer.last_heartbeat_ns = peer.last_heartbeat_ns.max(now_ns);
                if !a.alive {
                    peer.entities.remove(&frame.entity_id);
                    if frame.entity_id == 0 {
                        self.peers.remove(&frame.participant_id);
                    }
                    return Ok(());
                }
                let (kind, desc) = match a.kind {
                    AnnounceKind::Participant => (
                        EntityKind::Participant,
                        Descriptor::Participant { name: a.name },
                    ),
                    AnnounceKind::Publisher | AnnounceKind::Subscriber => (
                        if a.kind == AnnounceKind::Publisher {
                            EntityKind::Publisher
                        } else {
                            EntityKind::Subscriber
                        },
                        Descriptor::Topic(TopicDescriptor::new(a.name, a.type_hash, a.qos)),
                    ),
                    AnnounceKind::Service => (
                        EntityKind::Service,
                        Descriptor::Service(ServiceDescriptor::new(
                            a.name,
                            a.type_hash,
                            a.response_type_hash,
                        )),
                    ),
                };
                peer.entities.insert(frame.entity_id, (kind, desc));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_live(&self, participant_id: u64, now_ns: u64) -> bool {
        self.peers
            .get(&participant_id)
            .is_some_and(|p| now_ns.saturating_sub(p.last_heartbeat_ns) < self.lease_ns)
    }

    /// Live records ordered by `(participant_id, entity_id)`.
    pub fn records(&self, now_ns: u64, filter: DiscoveryFilter) -> Vec<DiscoveryRecord> {
        let mut out = Vec::new();
        for (&pid, peer) in &self.peers {
            if now_ns.saturating_sub(peer.last_heartbeat_ns) >= self.lease_ns {
                continue;
            }
            for (&eid, (kind, desc)) in &peer.entities {
                if filter.admits(*kind) {
                    out.push(DiscoveryRecord {
                        entity: *kind,
                        participant_id: pid,
                        entity_id: eid,
                        descriptor: desc.clone(),
                        liveliness_deadline_ns: peer.last_heartbeat_ns + self.lease_ns,
                    });
                }
            }
        }
        out
    }

    /// Live topic descriptors named `topic`.
    pub fn topic_descriptors(&self, topic: &str, now_ns: u64) -> Vec<TopicDescriptor> {
        self.records(now_ns, DiscoveryFilter::Topics)
            .into_iter()
            .filter_map(|r| match r.descriptor {
                Descriptor::Topic(t) if t.name == topic => Some(t),
                _ => None,
            })
            .collect()
    }

    pub fn find_service(&self, name: &str, now_ns: u64) -> Option<(u64, u32)> {
        self.records(now_ns, DiscoveryFilter::Services)
            .into_iter()
            .find(|r| r.descriptor.name() == name)
            .map(|r| (r.participant_id, r.entity_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::middleware::qos::QosProfile;

    fn announce(pid: u64, eid: u32, kind: AnnounceKind, name: &str, alive: bool) -> Frame {
        let a = Announce {
            kind,
            alive,
            name: name.into(),
            type_hash: 1,
            response_type_hash: 0,
            qos: QosProfile::default(),
        };
        Frame::new(MsgType::Announce, pid, eid, 0).with_payload(a.encode())
    }

    #[test]
    fn expiry_is_strict_lease_window() {
        let lease = 300;
        let mut c = DiscoveryCache::new(lease);
        c.apply(&announce(7, 0, AnnounceKind::Participant, "p", true), 1000)
            .unwrap();
        assert!(c.is_live(7, 1000 + lease - 1));
        assert!(!c.is_live(7, 1000 + lease));
        c.apply(&Frame::new(MsgType::Heartbeat, 7, 0, 1), 1200)
            .unwrap();
        assert!(c.is_live(7, 1499));
        assert!(!c.is_live(7, 1500));
    }

    #[test]
    fn retraction_removes_entity() {
        let mut c = DiscoveryCache::new(100);
        c.apply(&announce(1, 0, AnnounceKind::Participant, "p", true), 0)
            .unwrap();
        c.apply(&announce(1, 3, AnnounceKind::Publisher, "t", true), 0)
            .unwrap();
        assert_eq!(c.records(0, DiscoveryFilter::Topics).len(), 1);
        c.apply(&announce(1, 3, AnnounceKind::Publisher, "t", false), 0)
            .unwrap();
        assert!(c.records(0, DiscoveryFilter::Topics).is_empty());
        assert_eq!(c.records(0, DiscoveryFilter::All).len(), 1);
    }
}
