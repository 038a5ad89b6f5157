//! DFP1 framing used by the loopback transport and the discovery plane.
//!
//! All integers are big-endian. The header is exactly 32 bytes:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DFP1" (0x44 0x46 0x50 0x31)
//!      4     1  version (0x01)
//!      5     1  msg_type
//!      6     1  flags    bit0 = reliable, bit1 = transient_local, others 0
//!      7     1  reserved (0x00)
//!      8     8  participant_id
//!     16     4  entity_id
//!     20     8  seq
//!     28     4  payload_len
//!     32     n  payload
//! ```
//!
//! Payload layouts per message type:
//!
//! * `DATA`: the sample bytes, verbatim. `seq` is the writer sequence number.
//! * `ANNOUNCE`: see [`Announce`]. `entity_id` is the announced entity (0 for
//!   the participant itself).
//! * `SUBSCRIBE`: `writer_entity: u32`. Sent by a reader to a matched writer to
//!   request replay of retained samples.
//! * `REQUEST`: `name_len: u16`, service name, request body. `seq` is the
//!   request id.
//! * `RESPONSE`: `status: u8` (0 ok, 1 fault), `code: i32`, `msg_len: u16`,
//!   message, response body. `seq` echoes the request id.
//! * `HEARTBEAT`: empty for participant liveliness (`entity_id` 0). Writer
//!   heartbeats carry `first_seq: u64, next_seq: u64`.
//! * `NACK`: `writer_participant: u64, writer_entity: u32, count: u32`, then
//!   `count` missing sequence numbers (u64). Header `seq` is the reader's
//!   acknowledgement base: every seq below it has been received.

use thiserror::Error;

use super::qos::{Durability, History, QosProfile, Reliability};

pub const MAGIC: [u8; 4] = *b"DFP1";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 32;

pub const FLAG_RELIABLE: u8 = 0b01;
pub const FLAG_TRANSIENT_LOCAL: u8 = 0b10;
const FLAG_RESERVED_MASK: u8 = !(FLAG_RELIABLE | FLAG_TRANSIENT_LOCAL);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Data = 0,
    Announce = 1,
    Subscribe = 2,
    Request = 3,
    Response = 4,
    Heartbeat = 5,
    Nack = 6,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Data,
        MsgType::Announce,
        MsgType::Subscribe,
        MsgType::Request,
        MsgType::Response,
        MsgType::Heartbeat,
        MsgType::Nack,
    ];

    pub fn from_u8(v: u8) -> Option<MsgType> {
        MsgType::ALL.get(v as usize).copied()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FramingError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown msg_type {0}")]
    UnknownMsgType(u8),
    #[error("reserved flag bits set: {0:#010b}")]
    ReservedFlags(u8),
    #[error("reserved byte is {0:#04x}, expected 0")]
    ReservedByte(u8),
    #[error("payload length {declared} does not match {actual} trailing bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the u32 length field")]
    PayloadTooLarge(usize),
    #[error("malformed {0} payload")]
    BadPayload(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub flags: u8,
    pub participant_id: u64,
    pub entity_id: u32,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, participant_id: u64, entity_id: u32, seq: u64) -> Self {
        Self {
            msg_type,
            flags: 0,
            participant_id,
            entity_id,
            seq,
            payload: Vec::new(),
        }
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    /// Checks that a payload of `len` bytes fits the length field.
    pub fn check_payload_len(len: usize) -> Result<u32, FramingError> {
        u32::try_from(len).map_err(|_| FramingError::PayloadTooLarge(len))
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FramingError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), FramingError> {
        let len = Self::check_payload_len(self.payload.len())?;
        if self.flags & FLAG_RESERVED_MASK != 0 {
            return Err(FramingError::ReservedFlags(self.flags));
        }
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.push(self.flags);
        out.push(0);
        out.extend_from_slice(&self.participant_id.to_be_bytes());
        out.extend_from_slice(&self.entity_id.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, FramingError> {
        if bytes.len() < HEADER_LEN {
            return Err(FramingError::Truncated {
                needed: HEADER_LEN,
                have: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FramingError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(FramingError::BadVersion(bytes[4]));
        }
        let msg_type = MsgType::from_u8(bytes[5]).ok_or(FramingError::UnknownMsgType(bytes[5]))?;
        let flags = bytes[6];
        if flags & FLAG_RESERVED_MASK != 0 {
            return Err(FramingError::ReservedFlags(flags));
        }
        if bytes[7] != 0 {
            return Err(FramingError::ReservedByte(bytes[7]));
        }
        let mut r = Reader::new(&bytes[8..HEADER_LEN]);
        let participant_id = r.u64()?;
        let entity_id = r.u32()?;
        let seq = r.u64()?;
        let declared = r.u32()? as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != declared {
            return Err(FramingError::LengthMismatch {
                declared,
                actual: body.len(),
            });
        }
        Ok(Frame {
            msg_type,
            flags,
            participant_id,
            entity_id,
            seq,
            payload: body.to_vec(),
        })
    }
}

pub fn qos_flags(qos: &QosProfile) -> u8 {
    let mut f = 0;
    if qos.reliability == Reliability::Reliable {
        f |= FLAG_RELIABLE;
    }
    if qos.durability == Durability::TransientLocal {
        f |= FLAG_TRANSIENT_LOCAL;
    }
    f
}

/// Big-endian cursor over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FramingError> {
        if self.pos + n > self.buf.len() {
            return Err(FramingError::Truncated {
                needed: self.pos + n,
                have: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FramingError> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16, FramingError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub(crate) fn u32(&mut self) -> Result<u32, FramingError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn i32(&mut self) -> Result<i32, FramingError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn u64(&mut self) -> Result<u64, FramingError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn str16(&mut self, what: &'static str) -> Result<String, FramingError> {
        let n = self.u16()? as usize;
        let s = self.take(n)?;
        String::from_utf8(s.to_vec()).map_err(|_| FramingError::BadPayload(what))
    }
    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
    pub(crate) fn finish(&self, what: &'static str) -> Result<(), FramingError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FramingError::BadPayload(what))
        }
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let n = u16::try_from(s.len()).expect("name longer than 65535 bytes");
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Kind of entity carried by an ANNOUNCE frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum AnnounceKind {
    Participant = 0,
    Publisher = 1,
    Subscriber = 2,
    Service = 3,
}

/// ANNOUNCE payload.
///
/// ```text
/// kind: u8, alive: u8, name_len: u16, name,
/// type_hash: u64, response_type_hash: u64,
/// reliability: u8, history_kind: u8, history_depth: u32,
/// durability: u8, deadline_ms: u32 (0 = none)
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Announce {
    pub kind: AnnounceKind,
    /// false retracts a previously announced entity.
    pub alive: bool,
    pub name: String,
    pub type_hash: u64,
    pub response_type_hash: u64,
    pub qos: QosProfile,
}

impl Announce {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.name.len());
        out.push(self.kind as u8);
        out.push(self.alive as u8);
        put_str16(&mut out, &self.name);
        out.extend_from_slice(&self.type_hash.to_be_bytes());
        out.extend_from_slice(&self.response_type_hash.to_be_bytes());
        out.push(match self.qos.reliability {
            Reliability::BestEffort => 0,
            Reliability::Reliable => 1,
        });
        let (hk, depth) = match self.qos.history {
            History::KeepLast(n) => (0u8, n),
            History::KeepAll => (1u8, 0),
        };
        out.push(hk);
        out.extend_from_slice(&depth.to_be_bytes());
        out.push(match self.qos.durability {
            Durability::Volatile => 0,
            Durability::TransientLocal => 1,
        });
        out.extend_from_slice(&self.qos.deadline_ms.unwrap_or(0).to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Announce, FramingError> {
        const W: &str = "ANNOUNCE";
        let mut r = Reader::new(buf);
        let kind = match r.u8()? {
            0 => AnnounceKind::Participant,
            1 => AnnounceKind::Publisher,
            2 => AnnounceKind::Subscriber,
            3 => AnnounceKind::Service,
            _ => return Err(FramingError::BadPayload(W)),
        };
        let alive = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(FramingError::BadPayload(W)),
        };
        let name = r.str16(W)?;
        let type_hash = r.u64()?;
        let response_type_hash = r.u64()?;
        let reliability = match r.u8()? {
            0 => Reliability::BestEffort,
            1 => Reliability::Reliable,
            _ => return Err(FramingError::BadPayload(W)),
        };
        let history = match (r.u8()?, r.u32()?) {
            (0, n) if n >= 1 => History::KeepLast(n),
            (1, _) => History::KeepAll,
            _ => return Err(FramingError::BadPayload(W)),
        };
        let durability = match r.u8()? {
            0 => Durability::Volatile,
            1 => Durability::TransientLocal,
            _ => return Err(FramingError::BadPayload(W)),
        };
        let deadline = r.u32()?;
        r.finish(W)?;
        Ok(Announce {
            kind,
            alive,
            name,
            type_hash,
            response_type_hash,
            qos: QosProfile {
                reliability,
                history,
                durability,
                deadline_ms: (deadline != 0).then_some(deadline),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriterHeartbeat {
    pub first_seq: u64,
    pub next_seq: u64,
}

impl WriterHeartbeat {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.first_seq.to_be_bytes());
        out.extend_from_slice(&self.next_seq.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FramingError> {
        let mut r = Reader::new(buf);
        let hb = Self {
            first_seq: r.u64()?,
            next_seq: r.u64()?,
        };
        r.finish("HEARTBEAT")?;
        Ok(hb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nack {
    pub writer_participant: u64,
    pub writer_entity: u32,
    pub missing: Vec<u64>,
}

impl Nack {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.missing.len());
        out.extend_from_slice(&self.writer_participant.to_be_bytes());
        out.extend_from_slice(&self.writer_entity.to_be_bytes());
        out.extend_from_slice(&(self.missing.len() as u32).to_be_bytes());
        for s in &self.missing {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FramingError> {
        let mut r = Reader::new(buf);
        let writer_participant = r.u64()?;
        let writer_entity = r.u32()?;
        let n = r.u32()? as usize;
        let missing = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        r.finish("NACK")?;
        Ok(Self {
            writer_participant,
            writer_entity,
            missing,
        })
    }
}

pub fn encode_subscribe(writer_entity: u32) -> Vec<u8> {
    writer_entity.to_be_bytes().to_vec()
}

pub fn decode_subscribe(buf: &[u8]) -> Result<u32, FramingError> {
    let mut r = Reader::new(buf);
    let e = r.u32()?;
    r.finish("SUBSCRIBE")?;
    Ok(e)
}

pub fn encode_request(service: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + service.len() + body.len());
    put_str16(&mut out, service);
    out.extend_from_slice(body);
    out
}

pub fn decode_request(buf: &[u8]) -> Result<(String, Vec<u8>), FramingError> {
    let mut r = Reader::new(buf);
    let name = r.str16("REQUEST")?;
    Ok((name, r.rest().to_vec()))
}

/// Outcome carried by a RESPONSE frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBody {
    Ok(Vec<u8>),
    Fault { code: i32, message: String },
}

impl ResponseBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ResponseBody::Ok(body) => {
                out.push(0);
                out.extend_from_slice(&0i32.to_be_bytes());
                put_str16(&mut out, "");
                out.extend_from_slice(body);
            }
            ResponseBody::Fault { code, message } => {
                out.push(1);
                out.extend_from_slice(&code.to_be_bytes());
                put_str16(&mut out, message);
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FramingError> {
        let mut r = Reader::new(buf);
        let status = r.u8()?;
        let code = r.i32()?;
        let message = r.str16("RESPONSE")?;
        let body = r.rest().to_vec();
        match status {
            0 => Ok(ResponseBody::Ok(body)),
            1 => Ok(ResponseBody::Fault { code, message }),
            _ => Err(FramingError::BadPayload("RESPONSE")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_frame_golden_prefix() {
        let f = Frame::new(MsgType::Data, 1, 2, 0).with_payload(b"hi".to_vec());
        let bytes = f.encode().unwrap();
        assert_eq!(bytes.len(), 34);
        assert_eq!(
            &bytes[..8],
            &[0x44, 0x46, 0x50, 0x31, 0x01, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn rejects_corruption() {
        let good = Frame::new(MsgType::Heartbeat, 9, 0, 3).encode().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            Frame::decode(&bad),
            Err(FramingError::BadMagic(_))
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(Frame::decode(&bad), Err(FramingError::BadVersion(2)));
        let mut bad = good.clone();
        bad[5] = 7;
        assert_eq!(Frame::decode(&bad), Err(FramingError::UnknownMsgType(7)));
        let mut bad = good.clone();
        bad[6] = 0b100;
        assert_eq!(Frame::decode(&bad), Err(FramingError::ReservedFlags(0b100)));
        let mut bad = good.clone();
        bad[7] = 1;
        assert_eq!(Frame::decode(&bad), Err(FramingError::ReservedByte(1)));
        assert!(matches!(
            Frame::decode(&good[..20]),
            Err(FramingError::Truncated { .. })
        ));
        let mut long = good;
        long.push(0);
        assert!(matches!(
            Frame::decode(&long),
            Err(FramingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reserved_flags_not_encodable() {
        let f = Frame::new(MsgType::Data, 1, 1, 1).with_flags(0x80);
        assert_eq!(f.encode(), Err(FramingError::ReservedFlags(0x80)));
    }

    #[test]
    fn payload_len_limit() {
        assert_eq!(Frame::check_payload_len(u32::MAX as usize), Ok(u32::MAX));
        #[cfg(target_pointer_width = "64")]
        assert_eq!(
            Frame::check_payload_len(u32::MAX as usize + 1),
            Err(FramingError::PayloadTooLarge(u32::MAX as usize + 1))
        );
    }

    #[test]
    fn response_roundtrip() {
        for body in [
            ResponseBody::Ok(b"pong".to_vec()),
            ResponseBody::Fault {
                code: -3,
                message: "boom".into(),
            },
        ] {
            assert_eq!(ResponseBody::decode(&body.encode()).unwrap(), body);
        }
    }
}
