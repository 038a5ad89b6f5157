//! Participants, endpoints and the two transports.
//!
//! A [`Domain`] hosts any number of segments. All in-process participants
//! share one segment and exchange samples by handle. Each loopback port is a
//! separate segment on which every frame is DFP1-encoded and carried over a
//! simulated datagram link with optional seeded loss; reliable topics recover
//! from loss with writer heartbeats and reader NACKs.
//!
//! Loss injection applies to the data path only (DATA, NACK and writer
//! HEARTBEAT frames). Discovery, SUBSCRIBE and client/server frames are
//! delivered intact.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock, Weak};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::arena::{Loan, Payload, SlotArena, DEFAULT_MAX_SLOTS, DEFAULT_SLOT_SIZE};
use super::discovery::{DiscoveryCache, DiscoveryFilter, DiscoveryRecord, SimClock};
use super::qos::{qos_compatible, Durability, Reliability, ServiceDescriptor, TopicDescriptor};
use super::wire::{
    self, qos_flags, Announce, AnnounceKind, Frame, MsgType, Nack, ResponseBody, WriterHeartbeat,
};
use super::{MiddlewareError, Result, Sample};

/// Upper bound on heartbeat/NACK rounds per [`Domain::spin`].
const MAX_SPIN_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Transport {
    InProcess,
    Loopback(u16),
}

/// How in-process samples reach subscribers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Subscribers receive a handle to the publisher's buffer.
    ZeroCopy,
    /// Each delivery serializes and deserializes a private copy. Used as the
    /// benchmark baseline.
    Copying,
}

#[derive(Debug, Clone)]
pub struct DomainConfig {
    pub heartbeat_period_ns: u64,
    /// Records lapse after this many missed heartbeats.
    pub liveliness_periods: u32,
    pub slot_size: usize,
    pub max_slots: usize,
    pub delivery: DeliveryMode,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_ns: 100_000_000,
            liveliness_periods: 3,
            slot_size: DEFAULT_SLOT_SIZE,
            max_slots: DEFAULT_MAX_SLOTS,
            delivery: DeliveryMode::ZeroCopy,
        }
    }
}

/// Error returned by a service handler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceFault {
    pub code: i32,
    pub message: String,
}

impl ServiceFault {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

pub type Handler = Arc<dyn Fn(&[u8]) -> std::result::Result<Vec<u8>, ServiceFault> + Send + Sync>;

/// A discovery frame as it went over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireEvent {
    pub segment: Transport,
    /// `None` for a segment broadcast.
    pub to: Option<u64>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub framing_errors: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TopicStats {
    pub published: u64,
    pub delivered: u64,
    /// Samples evicted from subscriber queues by KeepLast.
    pub evicted: u64,
    /// Best-effort samples never received, or reliable samples skipped after
    /// leaving the writer's window.
    pub lost: u64,
    pub deadline_missed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SubscriberStats {
    pub received: u64,
    pub evicted: u64,
    pub lost: u64,
    pub deadline_missed: u64,
}

struct Envelope {
    to_participant: u64,
    to_entity: u32,
    msg_type: MsgType,
    bytes: Vec<u8>,
}

struct LinkState {
    queue: VecDeque<Envelope>,
    loss: f64,
    rng: ChaCha8Rng,
    stats: LinkStats,
}

struct Link {
    state: Mutex<LinkState>,
}

impl Link {
    fn new() -> Self {
        Self {
            state: Mutex::new(LinkState {
                queue: VecDeque::new(),
                loss: 0.0,
                rng: ChaCha8Rng::seed_from_u64(0),
                stats: LinkStats::default(),
            }),
        }
    }

    fn send(&self, env: Envelope) {
        let mut st = self.state.lock().unwrap();
        st.stats.sent += 1;
        let lossy = matches!(env.msg_type, MsgType::Data | MsgType::Nack)
            || (env.msg_type == MsgType::Heartbeat && env.to_entity != 0);
        if lossy && st.loss > 0.0 {
            let roll: f64 = st.rng.gen();
            if roll < st.loss {
                st.stats.dropped += 1;
                return;
            }
        }
        st.queue.push_back(env);
    }

    fn pop(&self) -> Option<Envelope> {
        let mut st = self.state.lock().unwrap();
        let env = st.queue.pop_front();
        if env.is_some() {
            st.stats.delivered += 1;
        }
        env
    }
}

pub(crate) struct DomainInner {
    config: DomainConfig,
    clock: SimClock,
    next_pid: AtomicU64,
    next_request_id: AtomicU64,
    participants: RwLock<BTreeMap<u64, Arc<ParticipantInner>>>,
    arenas: Mutex<HashMap<String, Arc<SlotArena>>>,
    links: Mutex<BTreeMap<u16, Arc<Link>>>,
    blocked_ports: Mutex<BTreeSet<u16>>,
    wire_log: Mutex<Vec<WireEvent>>,
    /// Counters of dropped endpoints, so topic totals cover the whole run.
    retired: Mutex<BTreeMap<String, TopicStats>>,
}

/// A set of communication segments sharing one simulated clock.
#[derive(Clone)]
pub struct Domain {
    inner: Arc<DomainInner>,
}

impl Default for Domain {
    fn default() -> Self {
        Self::new(DomainConfig::default())
    }
}

impl std::fmt::Debug for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Domain")
            .field("now_ns", &self.inner.clock.now_ns())
            .field(
                "participants",
                &self.inner.participants.read().unwrap().len(),
            )
            .finish()
    }
}

impl Domain {
    pub fn new(config: DomainConfig) -> Self {
        Self {
            inner: Arc::new(DomainInner {
                config,
                clock: SimClock::new(),
                next_pid: AtomicU64::new(1),
                next_request_id: AtomicU64::new(1),
                participants: RwLock::new(BTreeMap::new()),
                arenas: Mutex::new(HashMap::new()),
                links: Mutex::new(BTreeMap::new()),
                blocked_ports: Mutex::new(BTreeSet::new()),
                wire_log: Mutex::new(Vec::new()),
                retired: Mutex::new(BTreeMap::new()),
            }),
        }
    }

    pub fn config(&self) -> &DomainConfig {
        &self.inner.config
    }

    pub fn clock(&self) -> &SimClock {
        &self.inner.clock
    }

    pub fn now_ns(&self) -> u64 {
        self.inner.clock.now_ns()
    }

    pub fn create_participant(&self, name: &str, transport: Transport) -> Result<Participant> {
        if name.trim().is_empty() {
            return Err(MiddlewareError::InvalidName(name.to_string()));
        }
        if let Transport::Loopback(port) = transport {
            if port == 0 || self.inner.blocked_ports.lock().unwrap().contains(&port) {
                return Err(MiddlewareError::TransportUnavailable(format!(
                    "cannot bind loopback port {port}"
                )));
            }
            self.inner
                .links
                .lock()
                .unwrap()
                .entry(port)
                .or_insert_with(|| Arc::new(Link::new()));
        }
        let id = self.inner.next_pid.fetch_add(1, Ordering::SeqCst);
        let now = self.inner.clock.now_ns();
        let p = Arc::new(ParticipantInner {
            id,
            name: name.to_string(),
            transport,
            alive: AtomicBool::new(true),
            next_entity: AtomicU32::new(1),
            cache: Mutex::new(DiscoveryCache::new(self.inner.lease_ns())),
            last_heartbeat_sent: AtomicU64::new(now),
            heartbeat_seq: AtomicU64::new(0),
            writers: RwLock::new(BTreeMap::new()),
            readers: RwLock::new(BTreeMap::new()),
            services: RwLock::new(BTreeMap::new()),
            pending: Mutex::new(HashMap::new()),
            late_responses: AtomicU64::new(0),
        });
        self.inner
            .participants
            .write()
            .unwrap()
            .insert(id, Arc::clone(&p));
        // Join: announce ourselves, then let every live peer re-announce its
        // entities to us.
        self.inner.broadcast(transport, &p.self_announce());
        for peer in self.inner.peers(transport) {
            if peer.id == id {
                continue;
            }
            for frame in peer.all_announcements() {
                self.inner.unicast_discovery(transport, &p, &frame);
            }
        }
        Ok(Participant {
            inner: p,
            domain: Arc::clone(&self.inner),
        })
    }

    /// Simulates another process holding `port`.
    pub fn block_port(&self, port: u16) {
        self.inner.blocked_ports.lock().unwrap().insert(port);
    }

    /// Sets the drop probability and RNG seed of a loopback segment.
    pub fn set_link_loss(&self, port: u16, probability: f64, seed: u64) {
        let link = Arc::clone(
            self.inner
                .links
                .lock()
                .unwrap()
                .entry(port)
                .or_insert_with(|| Arc::new(Link::new())),
        );
        let mut st = link.state.lock().unwrap();
        st.loss = probability.clamp(0.0, 1.0);
        st.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn link_stats(&self, port: u16) -> Option<LinkStats> {
        let links = self.inner.links.lock().unwrap();
        links.get(&port).map(|l| l.state.lock().unwrap().stats)
    }

    /// Advances simulated time and emits any due participant heartbeats.
    pub fn advance(&self, ns: u64) {
        self.inner.clock.advance(ns);
        self.inner.heartbeat_round();
    }

    /// One discovery round: a heartbeat period elapses, then loopback traffic
    /// is drained.
    pub fn run_discovery_round(&self) {
        self.advance(self.inner.config.heartbeat_period_ns);
        self.spin();
    }

    /// Drains every loopback segment, running heartbeat/NACK rounds until all
    /// reliable readers have acknowledged everything their writers hold.
    /// Returns false if the round limit was hit first.
    pub fn spin(&self) -> bool {
        let ports: Vec<u16> = self.inner.links.lock().unwrap().keys().copied().collect();
        ports.into_iter().all(|port| self.inner.spin_port(port))
    }

    pub fn wire_log(&self) -> Vec<WireEvent> {
        self.inner.wire_log.lock().unwrap().clone()
    }

    /// Per-topic counters over every endpoint in the domain.
    pub fn topic_stats(&self) -> BTreeMap<String, TopicStats> {
        let mut out = self.inner.retired.lock().unwrap().clone();
        for p in self.inner.participants.read().unwrap().values() {
            for w in p.writers.read().unwrap().values() {
                let st = w.state.lock().unwrap();
                out.entry(w.topic.name.clone()).or_default().published += st.next_seq;
            }
            for r in p.readers.read().unwrap().values() {
                let s = r.stats();
                let e = out.entry(r.topic.name.clone()).or_default();
                e.delivered += s.received;
                e.evicted += s.evicted;
                e.lost += s.lost;
                e.deadline_missed += s.deadline_missed;
            }
        }
        out
    }

    pub fn arena(&self, topic: &str) -> Option<Arc<SlotArena>> {
        self.inner.arenas.lock().unwrap().get(topic).cloned()
    }
}

impl DomainInner {
    fn lease_ns(&self) -> u64 {
        self.config.heartbeat_period_ns * u64::from(self.config.liveliness_periods)
    }

    fn arena_for(&self, topic: &str) -> Arc<SlotArena> {
        Arc::clone(
            self.arenas
                .lock()
                .unwrap()
                .entry(topic.to_string())
                .or_insert_with(|| SlotArena::new(self.config.slot_size, self.config.max_slots)),
        )
    }

    fn link(&self, port: u16) -> Option<Arc<Link>> {
        self.links.lock().unwrap().get(&port).cloned()
    }

    fn participant(&self, id: u64) -> Option<Arc<ParticipantInner>> {
        self.participants.read().unwrap().get(&id).cloned()
    }

    /// Live participants on a segment, in id order.
    fn peers(&self, segment: Transport) -> Vec<Arc<ParticipantInner>> {
        self.participants
            .read()
            .unwrap()
            .values()
            .filter(|p| p.transport == segment && p.is_alive())
            .cloned()
            .collect()
    }

    fn broadcast(&self, segment: Transport, frame: &Frame) {
        let bytes = frame.encode().expect("discovery frame encodes");
        self.wire_log.lock().unwrap().push(WireEvent {
            segment,
            to: None,
            bytes: bytes.clone(),
        });
        let now = self.clock.now_ns();
        for p in self.peers(segment) {
            let decoded = Frame::decode(&bytes).expect("own frame decodes");
            let _ = p.cache.lock().unwrap().apply(&decoded, now);
        }
    }

    fn unicast_discovery(&self, segment: Transport, to: &ParticipantInner, frame: &Frame) {
        let bytes = frame.encode().expect("discovery frame encodes");
        self.wire_log.lock().unwrap().push(WireEvent {
            segment,
            to: Some(to.id),
            bytes: bytes.clone(),
        });
        let decoded = Frame::decode(&bytes).expect("own frame decodes");
        let _ = to
            .cache
            .lock()
            .unwrap()
            .apply(&decoded, self.clock.now_ns());
    }

    fn heartbeat_round(&self) {
        let now = self.clock.now_ns();
        let period = self.config.heartbeat_period_ns;
        let all: Vec<Arc<ParticipantInner>> = self
            .participants
            .read()
            .unwrap()
            .values()
            .cloned()
            .collect();
        for p in all.iter().filter(|p| p.is_alive()) {
            let last = p.last_heartbeat_sent.load(Ordering::SeqCst);
            if now.saturating_sub(last) >= period {
                p.last_heartbeat_sent.store(now, Ordering::SeqCst);
                let seq = p.heartbeat_seq.fetch_add(1, Ordering::SeqCst);
                self.broadcast(p.transport, &Frame::new(MsgType::Heartbeat, p.id, 0, seq));
            }
        }
    }

    fn send(&self, port: u16, to_participant: u64, to_entity: u32, frame: &Frame) {
        let Some(link) = self.link(port) else { return };
        let bytes = match frame.encode() {
            Ok(b) => b,
            Err(e) => {
                log::warn!("dropping unencodable frame: {e}");
                return;
            }
        };
        link.send(Envelope {
            to_participant,
            to_entity,
            msg_type: frame.msg_type,
            bytes,
        });
    }

    /// Delivers queued frames on one port until the queue is empty.
    fn pump(&self, port: u16) {
        let Some(link) = self.link(port) else { return };
        while let Some(env) = link.pop() {
            let frame = match Frame::decode(&env.bytes) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("framing error on port {port}: {e}");
                    link.state.lock().unwrap().stats.framing_errors += 1;
                    continue;
                }
            };
            if let Some(p) = self.participant(env.to_participant) {
                if p.is_alive() {
                    p.handle_frame(self, port, env.to_entity, frame);
                }
            }
        }
    }

    fn spin_port(&self, port: u16) -> bool {
        for _ in 0..MAX_SPIN_ROUNDS {
            self.pump(port);
            let mut sent = 0;
            for p in self.peers(Transport::Loopback(port)) {
                let writers: Vec<_> = p.writers.read().unwrap().values().cloned().collect();
                for w in writers {
                    sent += w.heartbeat_lagging_readers(self, port);
                }
            }
            if sent == 0 {
                return true;
            }
        }
        self.pump(port);
        false
    }
}

pub(crate) struct ParticipantInner {
    id: u64,
    name: String,
    transport: Transport,
    alive: AtomicBool,
    next_entity: AtomicU32,
    cache: Mutex<DiscoveryCache>,
    last_heartbeat_sent: AtomicU64,
    heartbeat_seq: AtomicU64,
    writers: RwLock<BTreeMap<u32, Arc<WriterInner>>>,
    readers: RwLock<BTreeMap<u32, Arc<ReaderInner>>>,
    services: RwLock<BTreeMap<u32, Arc<ServiceInner>>>,
    pending: Mutex<HashMap<u64, mpsc::Sender<ResponseBody>>>,
    late_responses: AtomicU64,
}

impl ParticipantInner {
    fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    fn self_announce(&self) -> Frame {
        let a = Announce {
            kind: AnnounceKind::Participant,
            alive: true,
            name: self.name.clone(),
            type_hash: 0,
            response_type_hash: 0,
            qos: Default::default(),
        };
        Frame::new(MsgType::Announce, self.id, 0, 0).with_payload(a.encode())
    }

    fn all_announcements(&self) -> Vec<Frame> {
        let mut out = vec![self.self_announce()];
        for w in self.writers.read().unwrap().values() {
            out.push(topic_announce(
                self.id,
                w.eid,
                AnnounceKind::Publisher,
                &w.topic,
                true,
            ));
        }
        for r in self.readers.read().unwrap().values() {
            out.push(topic_announce(
                self.id,
                r.eid,
                AnnounceKind::Subscriber,
                &r.topic,
                true,
            ));
        }
        for s in self.services.read().unwrap().values() {
            out.push(service_announce(self.id, s.eid, &s.desc, true));
        }
        out.sort_by_key(|f| f.entity_id);
        out
    }

    fn complete_call(&self, request_id: u64, body: ResponseBody) {
        let tx = self.pending.lock().unwrap().remove(&request_id);
        match tx {
            Some(tx) => {
                let _ = tx.send(body);
            }
            None => {
                self.late_responses.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    fn handle_frame(
        self: &Arc<Self>,
        domain: &DomainInner,
        port: u16,
        to_entity: u32,
        frame: Frame,
    ) {
        match frame.msg_type {
            MsgType::Data | MsgType::Heartbeat => {
                let reader = self.readers.read().unwrap().get(&to_entity).cloned();
                if let Some(r) = reader {
                    r.on_frame(domain, port, &frame);
                }
            }
            MsgType::Nack | MsgType::Subscribe => {
                let writer = self.writers.read().unwrap().get(&to_entity).cloned();
                if let Some(w) = writer {
                    w.on_frame(domain, port, &frame);
                }
            }
            MsgType::Request => {
                let service = self.services.read().unwrap().get(&to_entity).cloned();
                let reply = ReplyRoute::Loopback {
                    port,
                    caller: frame.participant_id,
                };
                match (service, wire::decode_request(&frame.payload)) {
                    (Some(s), Ok((name, body))) if name == s.desc.service_name => {
                        s.submit(Job {
                            request_id: frame.seq,
                            body,
                            reply,
                        });
                    }
                    _ => {
                        let fault = ResponseBody::Fault {
                            code: -404,
                            message: "no such service entity".into(),
                        };
                        let resp = Frame::new(MsgType::Response, self.id, to_entity, frame.seq)
                            .with_payload(fault.encode());
                        domain.send(port, frame.participant_id, frame.entity_id, &resp);
                    }
                }
            }
            MsgType::Response => match ResponseBody::decode(&frame.payload) {
                Ok(body) => self.complete_call(frame.seq, body),
                Err(e) => log::warn!("bad RESPONSE payload: {e}"),
            },
            MsgType::Announce => {}
        }
    }
}

fn topic_announce(
    pid: u64,
    eid: u32,
    kind: AnnounceKind,
    t: &TopicDescriptor,
    alive: bool,
) -> Frame {
    let a = Announce {
        kind,
        alive,
        name: t.name.clone(),
        type_hash: t.type_hash,
        response_type_hash: 0,
        qos: t.qos,
    };
    Frame::new(MsgType::Announce, pid, eid, 0)
        .with_flags(qos_flags(&t.qos))
        .with_payload(a.encode())
}

fn service_announce(pid: u64, eid: u32, s: &ServiceDescriptor, alive: bool) -> Frame {
    let a = Announce {
        kind: AnnounceKind::Service,
        alive,
        name: s.service_name.clone(),
        type_hash: s.request_type_hash,
        response_type_hash: s.response_type_hash,
        qos: Default::default(),
    };
    Frame::new(MsgType::Announce, pid, eid, 0).with_payload(a.encode())
}

fn guid(pid: u64, eid: u32) -> u64 {
    (pid << 32) | u64::from(eid)
}

struct RemoteReader {
    reliable: bool,
    acked_below: u64,
}

struct WriterState {
    next_seq: u64,
    history: VecDeque<Sample>,
    local_readers: Vec<Arc<ReaderInner>>,
    remote_readers: BTreeMap<(u64, u32), RemoteReader>,
    /// Serialization buffer of the copying path, reused across publishes.
    tx_buf: Vec<u8>,
}

struct WriterInner {
    pid: u64,
    eid: u32,
    topic: TopicDescriptor,
    topic_name: Arc<str>,
    transport: Transport,
    arena: Arc<SlotArena>,
    copying: bool,
    state: Mutex<WriterState>,
}

impl WriterInner {
    fn reliable(&self) -> bool {
        self.topic.qos.reliability == Reliability::Reliable
    }

    fn transient_local(&self) -> bool {
        self.topic.qos.durability == Durability::TransientLocal
    }

    fn data_frame(&self, sample: &Sample) -> Frame {
        Frame::new(MsgType::Data, self.pid, self.eid, sample.seq)
            .with_flags(qos_flags(&self.topic.qos))
            .with_payload(sample.payload.to_vec())
    }

    fn heartbeat_frame(&self, st: &WriterState) -> Frame {
        let first = st.history.front().map_or(st.next_seq, |s| s.seq);
        let hb = WriterHeartbeat {
            first_seq: first,
            next_seq: st.next_seq,
        };
        Frame::new(MsgType::Heartbeat, self.pid, self.eid, st.next_seq)
            .with_flags(qos_flags(&self.topic.qos))
            .with_payload(hb.encode())
    }

    fn trim_history(&self, st: &mut WriterState) {
        if let Some(depth) = self.topic.qos.history.depth() {
            while st.history.len() > depth {
                st.history.pop_front();
            }
        }
        if self.transient_local() {
            return;
        }
        let floor = st
            .remote_readers
            .values()
            .filter(|r| r.reliable)
            .map(|r| r.acked_below)
            .min();
        match floor {
            Some(floor) => {
                while st.history.front().is_some_and(|s| s.seq < floor) {
                    st.history.pop_front();
                }
            }
            None => st.history.clear(),
        }
    }

    fn publish(&self, domain: &DomainInner, payload: Payload) -> u64 {
        let mut outgoing = Vec::new();
        let seq;
        {
            let mut st = self.state.lock().unwrap();
            seq = st.next_seq;
            st.next_seq += 1;
            let sample = Sample {
                topic: Arc::clone(&self.topic_name),
                seq,
                publisher_id: guid(self.pid, self.eid),
                timestamp_ns: domain.clock.now_ns(),
                payload,
            };
            let mut wire = std::mem::take(&mut st.tx_buf);
            for r in &st.local_readers {
                if self.copying {
                    // Serialize into the send buffer, then copy out on receipt.
                    wire.clear();
                    wire.extend_from_slice(&sample.payload);
                    r.deliver(Sample {
                        payload: Payload::from_vec(wire.to_vec()),
                        ..sample.clone()
                    });
                } else {
                    r.deliver(sample.clone());
                }
            }
            st.tx_buf = wire;
            if !st.remote_readers.is_empty() {
                let frame = self.data_frame(&sample);
                for &(rp, re) in st.remote_readers.keys() {
                    outgoing.push((rp, re, frame.clone()));
                }
            }
            st.history.push_back(sample);
            self.trim_history(&mut st);
        }
        if let Transport::Loopback(port) = self.transport {
            for (rp, re, f) in &outgoing {
                domain.send(port, *rp, *re, f);
            }
            domain.pump(port);
        }
        seq
    }

    fn on_frame(&self, domain: &DomainInner, port: u16, frame: &Frame) {
        let reader = (frame.participant_id, frame.entity_id);
        let mut out = Vec::new();
        {
            let mut st = self.state.lock().unwrap();
            if !st.remote_readers.contains_key(&reader) {
                return;
            }
            match frame.msg_type {
                MsgType::Nack => {
                    let Ok(nack) = Nack::decode(&frame.payload) else {
                        return;
                    };
                    if let Some(rr) = st.remote_readers.get_mut(&reader) {
                        rr.acked_below = rr.acked_below.max(frame.seq);
                    }
                    let first = st.history.front().map_or(st.next_seq, |s| s.seq);
                    let mut behind_window = false;
                    for seq in nack.missing {
                        if seq < first {
                            behind_window = true;
                        } else if let Some(s) = st.history.get((seq - first) as usize) {
                            debug_assert_eq!(s.seq, seq);
                            out.push(self.data_frame(s));
                        }
                    }
                    if behind_window {
                        out.push(self.heartbeat_frame(&st));
                    }
                    self.trim_history(&mut st);
                }
                MsgType::Subscribe => {
                    for s in &st.history {
                        out.push(self.data_frame(s));
                    }
                    if self.reliable() {
                        out.push(self.heartbeat_frame(&st));
                    }
                }
                _ => {}
            }
        }
        for f in &out {
            domain.send(port, reader.0, reader.1, f);
        }
    }

    /// Sends a heartbeat to every reliable remote reader that has not yet
    /// acknowledged `next_seq`. Returns the number of heartbeats sent.
    fn heartbeat_lagging_readers(&self, domain: &DomainInner, port: u16) -> usize {
        let (frame, targets) = {
            let st = self.state.lock().unwrap();
            let targets: Vec<(u64, u32)> = st
                .remote_readers
                .iter()
                .filter(|(_, r)| r.reliable && r.acked_below < st.next_seq)
                .map(|(k, _)| *k)
                .collect();
            (self.heartbeat_frame(&st), targets)
        };
        for &(rp, re) in &targets {
            domain.send(port, rp, re, &frame);
        }
        targets.len()
    }
}

struct ReaderQueue {
    samples: VecDeque<Sample>,
    received: u64,
    evicted: u64,
    deadline_missed: u64,
    last_arrival_ns: Option<u64>,
}

struct WriterProxy {
    reliable: bool,
    expected_next: u64,
    pending: BTreeMap<u64, Sample>,
    lost: u64,
}

struct ReaderInner {
    pid: u64,
    eid: u32,
    topic: TopicDescriptor,
    topic_name: Arc<str>,
    clock: SimClock,
    queue: Mutex<ReaderQueue>,
    proxies: Mutex<BTreeMap<(u64, u32), WriterProxy>>,
}

impl ReaderInner {
    fn deliver(&self, sample: Sample) {
        let mut q = self.queue.lock().unwrap();
        if let (Some(deadline), Some(last)) = (self.topic.qos.deadline_ms, q.last_arrival_ns) {
            if sample.timestamp_ns.saturating_sub(last) > u64::from(deadline) * 1_000_000 {
                q.deadline_missed += 1;
            }
        }
        q.last_arrival_ns = Some(sample.timestamp_ns);
        q.received += 1;
        q.samples.push_back(sample);
        if let Some(depth) = self.topic.qos.history.depth() {
            while q.samples.len() > depth {
                q.samples.pop_front();
                q.evicted += 1;
            }
        }
    }

    fn stats(&self) -> SubscriberStats {
        let q = self.queue.lock().unwrap();
        let lost = self.proxies.lock().unwrap().values().map(|p| p.lost).sum();
        SubscriberStats {
            received: q.received,
            evicted: q.evicted,
            lost,
            deadline_missed: q.deadline_missed,
        }
    }

    fn remote_sample(&self, frame: &Frame) -> Sample {
        Sample {
            topic: Arc::clone(&self.topic_name),
            seq: frame.seq,
            publisher_id: guid(frame.participant_id, frame.entity_id),
            timestamp_ns: self.clock.now_ns(),
            payload: Payload::copy_from(&frame.payload),
        }
    }

    fn on_frame(&self, domain: &DomainInner, port: u16, frame: &Frame) {
        let key = (frame.participant_id, frame.entity_id);
        let mut deliveries = Vec::new();
        let mut reply = None;
        {
            let mut proxies = self.proxies.lock().unwrap();
            let Some(px) = proxies.get_mut(&key) else {
                return;
            };
            match frame.msg_type {
                MsgType::Data => {
                    let seq = frame.seq;
                    if px.reliable {
                        if seq == px.expected_next {
                            deliveries.push(self.remote_sample(frame));
                            px.expected_next += 1;
                            while let Some(s) = px.pending.remove(&px.expected_next) {
                                deliveries.push(s);
                                px.expected_next += 1;
                            }
                        } else if seq > px.expected_next {
                            px.pending
                                .entry(seq)
                                .or_insert_with(|| self.remote_sample(frame));
                        }
                    } else if seq >= px.expected_next {
                        px.lost += seq - px.expected_next;
                        deliveries.push(self.remote_sample(frame));
                        px.expected_next = seq + 1;
                    }
                }
                MsgType::Heartbeat if px.reliable => {
                    let Ok(hb) = WriterHeartbeat::decode(&frame.payload) else {
                        return;
                    };
                    if hb.first_seq > px.expected_next {
                        // samples left the writer's window and cannot be repaired
                        let skipped = (px.expected_next..hb.first_seq)
                            .filter(|s| !px.pending.contains_key(s))
                            .count() as u64;
                        px.lost += skipped;
                        let keep = px.pending.split_off(&hb.first_seq);
                        deliveries.extend(std::mem::replace(&mut px.pending, keep).into_values());
                        px.expected_next = hb.first_seq;
                        while let Some(s) = px.pending.remove(&px.expected_next) {
                            deliveries.push(s);
                            px.expected_next += 1;
                        }
                    }
                    let missing: Vec<u64> = (px.expected_next..hb.next_seq)
                        .filter(|s| !px.pending.contains_key(s))
                        .collect();
                    let nack = Nack {
                        writer_participant: key.0,
                        writer_entity: key.1,
                        missing,
                    };
                    reply = Some(
                        Frame::new(MsgType::Nack, self.pid, self.eid, px.expected_next)
                            .with_payload(nack.encode()),
                    );
                }
                _ => {}
            }
        }
        for s in deliveries {
            self.deliver(s);
        }
        if let Some(f) = reply {
            domain.send(port, key.0, key.1, &f);
        }
    }
}

struct Job {
    request_id: u64,
    body: Vec<u8>,
    reply: ReplyRoute,
}

enum ReplyRoute {
    InProcess(Weak<ParticipantInner>),
    Loopback { port: u16, caller: u64 },
}

struct ServiceInner {
    pid: u64,
    eid: u32,
    desc: ServiceDescriptor,
    tx: Mutex<Option<mpsc::Sender<Job>>>,
}

impl ServiceInner {
    fn submit(&self, job: Job) {
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(job);
        }
    }
}

/// Handle to a domain participant.
#[derive(Clone)]
pub struct Participant {
    inner: Arc<ParticipantInner>,
    domain: Arc<DomainInner>,
}

impl std::fmt::Debug for Participant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Participant")
            .field("id", &self.inner.id)
            .field("name", &self.inner.name)
            .field("transport", &self.inner.transport)
            .finish()
    }
}

impl Participant {
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn transport(&self) -> Transport {
        self.inner.transport
    }

    pub fn is_alive(&self) -> bool {
        self.inner.is_alive()
    }

    fn ensure_alive(&self) -> Result<()> {
        if self.inner.is_alive() {
            Ok(())
        } else {
            Err(MiddlewareError::ParticipantClosed)
        }
    }

    fn check_type(&self, t: &TopicDescriptor) -> Result<()> {
        let now = self.domain.clock.now_ns();
        let cache = self.inner.cache.lock().unwrap();
        if let Some(existing) = cache
            .topic_descriptors(&t.name, now)
            .into_iter()
            .find(|d| d.type_hash != t.type_hash)
        {
            return Err(MiddlewareError::TypeHashMismatch {
                topic: t.name.clone(),
                existing: existing.type_hash,
                requested: t.type_hash,
            });
        }
        Ok(())
    }

    pub fn create_publisher(&self, topic: TopicDescriptor) -> Result<Publisher> {
        self.ensure_alive()?;
        topic.validate()?;
        self.check_type(&topic)?;
        let eid = self.inner.next_entity.fetch_add(1, Ordering::SeqCst);
        let w = Arc::new(WriterInner {
            pid: self.inner.id,
            eid,
            topic_name: Arc::from(topic.name.as_str()),
            arena: self.domain.arena_for(&topic.name),
            copying: self.domain.config.delivery == DeliveryMode::Copying,
            transport: self.inner.transport,
            topic,
            state: Mutex::new(WriterState {
                next_seq: 0,
                history: VecDeque::new(),
                local_readers: Vec::new(),
                remote_readers: BTreeMap::new(),
                tx_buf: Vec::new(),
            }),
        });
        self.inner
            .writers
            .write()
            .unwrap()
            .insert(eid, Arc::clone(&w));
        self.domain.broadcast(
            self.inner.transport,
            &topic_announce(self.inner.id, eid, AnnounceKind::Publisher, &w.topic, true),
        );
        for peer in self.domain.peers(self.inner.transport) {
            let readers: Vec<_> = peer.readers.read().unwrap().values().cloned().collect();
            for r in readers {
                if endpoints_match(&w.topic, &r.topic) {
                    self.domain.connect(&w, &r);
                }
            }
        }
        Ok(Publisher {
            w,
            p: Arc::clone(&self.inner),
            d: Arc::clone(&self.domain),
        })
    }

    pub fn create_subscriber(&self, topic: TopicDescriptor) -> Result<Subscriber> {
        self.ensure_alive()?;
        topic.validate()?;
        self.check_type(&topic)?;
        let eid = self.inner.next_entity.fetch_add(1, Ordering::SeqCst);
        let r = Arc::new(ReaderInner {
            pid: self.inner.id,
            eid,
            topic_name: Arc::from(topic.name.as_str()),
            topic,
            clock: self.domain.clock.clone(),
            queue: Mutex::new(ReaderQueue {
                samples: VecDeque::new(),
                received: 0,
                evicted: 0,
                deadline_missed: 0,
                last_arrival_ns: None,
            }),
            proxies: Mutex::new(BTreeMap::new()),
        });
        self.inner
            .readers
            .write()
            .unwrap()
            .insert(eid, Arc::clone(&r));
        self.domain.broadcast(
            self.inner.transport,
            &topic_announce(self.inner.id, eid, AnnounceKind::Subscriber, &r.topic, true),
        );
        for peer in self.domain.peers(self.inner.transport) {
            let writers: Vec<_> = peer.writers.read().unwrap().values().cloned().collect();
            for w in writers {
                if endpoints_match(&w.topic, &r.topic) {
                    self.domain.connect(&w, &r);
                }
            }
        }
        Ok(Subscriber {
            r,
            p: Arc::clone(&self.inner),
            d: Arc::clone(&self.domain),
        })
    }

    pub fn register_service<F>(&self, desc: ServiceDescriptor, handler: F) -> Result<ServiceHandle>
    where
        F: Fn(&[u8]) -> std::result::Result<Vec<u8>, ServiceFault> + Send + Sync + 'static,
    {
        self.ensure_alive()?;
        if desc.service_name.trim().is_empty() {
            return Err(MiddlewareError::InvalidName(desc.service_name));
        }
        let now = self.domain.clock.now_ns();
        if self
            .inner
            .cache
            .lock()
            .unwrap()
            .find_service(&desc.service_name, now)
            .is_some()
        {
            return Err(MiddlewareError::DuplicateService(desc.service_name));
        }
        let eid = self.inner.next_entity.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel::<Job>();
        let handler: Handler = Arc::new(handler);
        let domain = Arc::downgrade(&self.domain);
        let (pid, name) = (self.inner.id, desc.service_name.clone());
        let worker = thread::Builder::new()
            .name(format!("svc-{name}"))
            .spawn(move || {
                for job in rx {
                    let outcome = catch_unwind(AssertUnwindSafe(|| handler(&job.body)));
                    let body = match outcome {
                        Ok(Ok(b)) => ResponseBody::Ok(b),
                        Ok(Err(f)) => ResponseBody::Fault {
                            code: f.code,
                            message: f.message,
                        },
                        Err(_) => ResponseBody::Fault {
                            code: -1,
                            message: "handler panicked".into(),
                        },
                    };
                    match job.reply {
                        ReplyRoute::InProcess(caller) => {
                            if let Some(c) = caller.upgrade() {
                                c.complete_call(job.request_id, body);
                            }
                        }
                        ReplyRoute::Loopback { port, caller } => {
                            if let Some(d) = domain.upgrade() {
                                let f = Frame::new(MsgType::Response, pid, eid, job.request_id)
                                    .with_payload(body.encode());
                                d.send(port, caller, 0, &f);
                                d.pump(port);
                            }
                        }
                    }
                }
            })
            .expect("spawn service worker");
        let s = Arc::new(ServiceInner {
            pid: self.inner.id,
            eid,
            desc,
            tx: Mutex::new(Some(tx)),
        });
        self.inner
            .services
            .write()
            .unwrap()
            .insert(eid, Arc::clone(&s));
        self.domain.broadcast(
            self.inner.transport,
            &service_announce(self.inner.id, eid, &s.desc, true),
        );
        Ok(ServiceHandle {
            s,
            p: Arc::clone(&self.inner),
            d: Arc::clone(&self.domain),
            worker: Some(worker),
        })
    }

    /// Invokes a service and waits up to `timeout_ms` for its response.
    pub fn call(&self, service_name: &str, request: &[u8], timeout_ms: u64) -> Result<Vec<u8>> {
        self.ensure_alive()?;
        let now = self.domain.clock.now_ns();
        let not_found = || MiddlewareError::ServiceNotFound(service_name.to_string());
        let (spid, seid) = self
            .inner
            .cache
            .lock()
            .unwrap()
            .find_service(service_name, now)
            .ok_or_else(not_found)?;
        let server = self
            .domain
            .participant(spid)
            .filter(|p| p.is_alive())
            .ok_or_else(not_found)?;
        let request_id = self.domain.next_request_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.inner.pending.lock().unwrap().insert(request_id, tx);
        match self.inner.transport {
            Transport::InProcess => {
                let service = server.services.read().unwrap().get(&seid).cloned();
                match service {
                    Some(s) => s.submit(Job {
                        request_id,
                        body: request.to_vec(),
                        reply: ReplyRoute::InProcess(Arc::downgrade(&self.inner)),
                    }),
                    None => {
                        self.inner.pending.lock().unwrap().remove(&request_id);
                        return Err(not_found());
                    }
                }
            }
            Transport::Loopback(port) => {
                Frame::check_payload_len(request.len() + 2 + service_name.len())?;
                let f = Frame::new(MsgType::Request, self.inner.id, 0, request_id)
                    .with_payload(wire::encode_request(service_name, request));
                self.domain.send(port, spid, seid, &f);
                self.domain.pump(port);
            }
        }
        match rx.recv_timeout(Duration::from_millis(timeout_ms)) {
            Ok(ResponseBody::Ok(b)) => Ok(b),
            Ok(ResponseBody::Fault { code, message }) => {
                Err(MiddlewareError::RemoteError { code, message })
            }
            Err(_) => {
                self.inner.pending.lock().unwrap().remove(&request_id);
                Err(MiddlewareError::Timeout {
                    service: service_name.to_string(),
                    timeout_ms,
                })
            }
        }
    }

    /// Responses that arrived after their call had already timed out.
    pub fn late_responses(&self) -> u64 {
        self.inner.late_responses.load(Ordering::SeqCst)
    }

    /// Snapshot of live discovery records.
    pub fn discover(&self, filter: DiscoveryFilter) -> Vec<DiscoveryRecord> {
        let now = self.domain.clock.now_ns();
        self.inner.cache.lock().unwrap().records(now, filter)
    }

    /// Stops the participant without retracting its records: peers keep
    /// them until liveliness lapses. Endpoints are disconnected immediately
    /// and services stop accepting requests.
    pub fn shutdown(&self) {
        if !self.inner.alive.swap(false, Ordering::SeqCst) {
            return;
        }
        let writers: Vec<_> = self
            .inner
            .writers
            .read()
            .unwrap()
            .values()
            .cloned()
            .collect();
        for w in writers {
            self.domain.disconnect_writer(&w);
        }
        let readers: Vec<_> = self
            .inner
            .readers
            .read()
            .unwrap()
            .values()
            .cloned()
            .collect();
        for r in readers {
            self.domain.disconnect_reader(&r);
        }
        for s in self.inner.services.read().unwrap().values() {
            s.tx.lock().unwrap().take();
        }
    }
}

/// Whether a writer and reader on the same segment connect.
pub fn endpoints_match(writer: &TopicDescriptor, reader: &TopicDescriptor) -> bool {
    writer.name == reader.name
        && writer.type_hash == reader.type_hash
        && qos_compatible(&writer.qos, &reader.qos)
}

impl DomainInner {
    fn connect(&self, w: &Arc<WriterInner>, r: &Arc<ReaderInner>) {
        let replay = w.transient_local() && r.topic.qos.durability == Durability::TransientLocal;
        match w.transport {
            Transport::InProcess => {
                let mut st = w.state.lock().unwrap();
                if st.local_readers.iter().any(|x| Arc::ptr_eq(x, r)) {
                    return;
                }
                st.local_readers.push(Arc::clone(r));
                if replay {
                    for s in &st.history {
                        r.deliver(s.clone());
                    }
                }
            }
            Transport::Loopback(port) => {
                let reliable = r.topic.qos.reliability == Reliability::Reliable;
                let expected_next = {
                    let mut st = w.state.lock().unwrap();
                    let first = st.history.front().map_or(st.next_seq, |s| s.seq);
                    let start = if replay { first } else { st.next_seq };
                    st.remote_readers.insert(
                        (r.pid, r.eid),
                        RemoteReader {
                            reliable,
                            acked_below: start,
                        },
                    );
                    start
                };
                r.proxies.lock().unwrap().insert(
                    (w.pid, w.eid),
                    WriterProxy {
                        reliable,
                        expected_next,
                        pending: BTreeMap::new(),
                        lost: 0,
                    },
                );
                if replay {
                    let f = Frame::new(MsgType::Subscribe, r.pid, r.eid, 0)
                        .with_payload(wire::encode_subscribe(w.eid));
                    self.send(port, w.pid, w.eid, &f);
                    self.pump(port);
                }
            }
        }
    }

    fn disconnect_writer(&self, w: &Arc<WriterInner>) {
        let remote: Vec<(u64, u32)> = {
            let mut st = w.state.lock().unwrap();
            st.local_readers.clear();
            std::mem::take(&mut st.remote_readers).into_keys().collect()
        };
        for (rp, re) in remote {
            if let Some(p) = self.participant(rp) {
                if let Some(r) = p.readers.read().unwrap().get(&re) {
                    r.proxies.lock().unwrap().remove(&(w.pid, w.eid));
                }
            }
        }
    }

    fn disconnect_reader(&self, r: &Arc<ReaderInner>) {
        let all: Vec<Arc<ParticipantInner>> = self
            .participants
            .read()
            .unwrap()
            .values()
            .cloned()
            .collect();
        for p in all {
            for w in p.writers.read().unwrap().values() {
                let mut st = w.state.lock().unwrap();
                st.local_readers.retain(|x| !Arc::ptr_eq(x, r));
                st.remote_readers.remove(&(r.pid, r.eid));
            }
        }
        r.proxies.lock().unwrap().clear();
    }
}

/// Writing endpoint of a topic.
pub struct Publisher {
    w: Arc<WriterInner>,
    p: Arc<ParticipantInner>,
    d: Arc<DomainInner>,
}

impl std::fmt::Debug for Publisher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Publisher")
            .field("topic", &self.w.topic.name)
            .field("guid", &format_args!("{:#x}", self.guid()))
            .finish()
    }
}

impl Publisher {
    pub fn topic(&self) -> &TopicDescriptor {
        &self.w.topic
    }

    pub fn guid(&self) -> u64 {
        guid(self.w.pid, self.w.eid)
    }

    pub fn entity_id(&self) -> u32 {
        self.w.eid
    }

    fn ensure_alive(&self) -> Result<()> {
        if self.p.is_alive() {
            Ok(())
        } else {
            Err(MiddlewareError::ParticipantClosed)
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        match self.w.transport {
            Transport::InProcess if len > self.w.arena.slot_size() => {
                Err(MiddlewareError::PayloadTooLarge {
                    len,
                    limit: self.w.arena.slot_size(),
                })
            }
            Transport::Loopback(_) => {
                Frame::check_payload_len(len)?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Reserves an arena slot to be filled in place and published with
    /// [`Publisher::publish_loan`].
    pub fn loan(&self, len: usize) -> Result<Loan> {
        self.check_len(len)?;
        self.w.arena.loan(len)
    }

    pub fn publish_loan(&self, loan: Loan) -> Result<u64> {
        self.ensure_alive()?;
        Ok(self.w.publish(&self.d, loan.into_payload()))
    }

    /// Copies `payload` into an arena slot and publishes it.
    pub fn publish(&self, payload: &[u8]) -> Result<u64> {
        let mut loan = self.loan(payload.len())?;
        loan.copy_from_slice(payload);
        self.publish_loan(loan)
    }

    /// Publishes an existing buffer without copying it.
    pub fn publish_shared(&self, payload: Payload) -> Result<u64> {
        self.ensure_alive()?;
        self.check_len(payload.len())?;
        Ok(self.w.publish(&self.d, payload))
    }

    pub fn matched_subscribers(&self) -> usize {
        let st = self.w.state.lock().unwrap();
        st.local_readers.len() + st.remote_readers.len()
    }

    /// Sequence numbers currently retained for durability or repair.
    pub fn retained_seqs(&self) -> Vec<u64> {
        self.w
            .state
            .lock()
            .unwrap()
            .history
            .iter()
            .map(|s| s.seq)
            .collect()
    }

    pub fn next_seq(&self) -> u64 {
        self.w.state.lock().unwrap().next_seq
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.p.writers.write().unwrap().remove(&self.w.eid);
        self.d.disconnect_writer(&self.w);
        let published = self.w.state.lock().unwrap().next_seq;
        self.d
            .retired
            .lock()
            .unwrap()
            .entry(self.w.topic.name.clone())
            .or_default()
            .published += published;
        if self.p.is_alive() {
            self.d.broadcast(
                self.p.transport,
                &topic_announce(
                    self.w.pid,
                    self.w.eid,
                    AnnounceKind::Publisher,
                    &self.w.topic,
                    false,
                ),
            );
        }
    }
}

/// Reading endpoint of a topic.
pub struct Subscriber {
    r: Arc<ReaderInner>,
    p: Arc<ParticipantInner>,
    d: Arc<DomainInner>,
}

impl std::fmt::Debug for Subscriber {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscriber")
            .field("topic", &self.r.topic.name)
            .field("entity", &self.r.eid)
            .finish()
    }
}

impl Subscriber {
    pub fn topic(&self) -> &TopicDescriptor {
        &self.r.topic
    }

    pub fn entity_id(&self) -> u32 {
        self.r.eid
    }

    /// Removes and returns up to `max_n` queued samples, oldest first.
    pub fn take(&self, max_n: usize) -> Vec<Sample> {
        let mut q = self.r.queue.lock().unwrap();
        let n = max_n.min(q.samples.len());
        q.samples.drain(..n).collect()
    }

    pub fn queued(&self) -> usize {
        self.r.queue.lock().unwrap().samples.len()
    }

    pub fn stats(&self) -> SubscriberStats {
        self.r.stats()
    }

    /// Number of writers this reader is connected to.
    pub fn matched_publishers(&self) -> usize {
        let remote = self.r.proxies.lock().unwrap().len();
        let local = self
            .d
            .participants
            .read()
            .unwrap()
            .values()
            .flat_map(|p| {
                p.writers
                    .read()
                    .unwrap()
                    .values()
                    .cloned()
                    .collect::<Vec<_>>()
            })
            .filter(|w| {
                w.state
                    .lock()
                    .unwrap()
                    .local_readers
                    .iter()
                    .any(|x| Arc::ptr_eq(x, &self.r))
            })
            .count();
        remote + local
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.p.readers.write().unwrap().remove(&self.r.eid);
        self.d.disconnect_reader(&self.r);
        let s = self.r.stats();
        let mut retired = self.d.retired.lock().unwrap();
        let e = retired.entry(self.r.topic.name.clone()).or_default();
        e.delivered += s.received;
        e.evicted += s.evicted;
        e.lost += s.lost;
        e.deadline_missed += s.deadline_missed;
        if self.p.is_alive() {
            self.d.broadcast(
                self.p.transport,
                &topic_announce(
                    self.r.pid,
                    self.r.eid,
                    AnnounceKind::Subscriber,
                    &self.r.topic,
                    false,
                ),
            );
        }
    }
}

/// Keeps a service registered; dropping it unregisters the service.
pub struct ServiceHandle {
    s: Arc<ServiceInner>,
    p: Arc<ParticipantInner>,
    d: Arc<DomainInner>,
    worker: Option<thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.s.desc
    }
}

impl std::fmt::Debug for ServiceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceHandle")
            .field("service", &self.s.desc.service_name)
            .finish()
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.p.services.write().unwrap().remove(&self.s.eid);
        self.s.tx.lock().unwrap().take();
        if self.p.is_alive() {
            self.d.broadcast(
                self.p.transport,
                &service_announce(self.s.pid, self.s.eid, &self.s.desc, false),
            );
        }
        if let Some(h) = self.worker.take() {
            // a handler stuck past its caller's timeout must not block drop
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}
