//! Protocol messages and the bit-exact wire codec.
//!
//! A message is a 22-byte header followed by length-prefixed key and value
//! bytes and a 6-byte diagnostic trailer:
//!
//! ```text
//! offset  size  field
//!      0     1  op        (request/reply kind, see OpCode)
//!      1     4  seq       (client sequence number, big-endian u32)
//!      5    16  hkey      (128-bit key hash, big-endian)
//!     21     1  flag      (write-hit marker / multi-packet count)
//!     22     2  key len   (big-endian u16)
//!     24     2  value len (big-endian u16)
//!     26     -  key bytes, then value bytes
//!      -     1  cached    (diagnostic: reply served from the switch)
//!      -     4  latency   (diagnostic: switch queueing in us, big-endian)
//!      -     1  srv_id    (diagnostic: serving server id)
//! ```
//!
//! Source and destination addressing is structured metadata on [`Message`],
//! not wire bytes; only the region above is bit-exact and covered by the
//! golden fixtures. Key plus value must fit the single-packet budget of
//! 1438 bytes unless multi-packet transfers are enabled upstream.

use std::sync::Arc;

use thiserror::Error;

/// Serialized header length in bytes. The codec is written so this holds by
/// construction; `encode` asserts it.
pub const HEADER_LEN: usize = 22;
/// Bytes of key+value that fit one packet.
pub const PAYLOAD_BUDGET: usize = 1438;
/// Length framing after the header: two big-endian u16s.
pub const FRAMING_LEN: usize = 2 + 2;
/// Diagnostic trailer: cached u8, latency u32, srv_id u8.
pub const META_LEN: usize = 1 + 4 + 1;
/// Smallest decodable buffer: header + framing + trailer.
pub const MIN_WIRE_LEN: usize = HEADER_LEN + FRAMING_LEN + META_LEN;
/// Link/transport overhead charged per packet when computing serialization
/// delay (Ethernet + IP + UDP framing equivalent).
pub const TRANSPORT_OVERHEAD: usize = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum OpCode {
    ReadRequest = 1,
    WriteRequest = 2,
    ReadReply = 3,
    WriteReply = 4,
    FetchRequest = 5,
    FetchReply = 6,
    /// Re-read after a truncated-hash collision; bypasses all cache logic.
    CorrectionRequest = 7,
}

impl OpCode {
    pub fn from_wire(b: u8) -> Option<OpCode> {
        Some(match b {
            1 => OpCode::ReadRequest,
            2 => OpCode::WriteRequest,
            3 => OpCode::ReadReply,
            4 => OpCode::WriteReply,
            5 => OpCode::FetchRequest,
            6 => OpCode::FetchReply,
            7 => OpCode::CorrectionRequest,
            _ => return None,
        })
    }

    pub fn is_request(self) -> bool {
        matches!(
            self,
            OpCode::ReadRequest
                | OpCode::WriteRequest
                | OpCode::FetchRequest
                | OpCode::CorrectionRequest
        )
    }
}

/// A node/port pair. Node ids index simulation entities; ports exist so
/// request-table metadata can restore the full reply address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Endpoint {
    pub node: u16,
    pub port: u16,
}

impl Endpoint {
    pub const UNSPECIFIED: Endpoint = Endpoint { node: u16::MAX, port: 0 };

    pub fn new(node: u16, port: u16) -> Endpoint {
        Endpoint { node, port }
    }
}

/// Diagnostic fields carried end to end but never consulted by protocol
/// logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Meta {
    pub cached: u8,
    pub latency_us: u32,
    pub srv_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub op: OpCode,
    pub seq: u32,
    pub hkey: u128,
    pub flag: u8,
    pub key: Arc<[u8]>,
    pub value: Arc<[u8]>,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub meta: Meta,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("buffer too short: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("unknown op code {0}")]
    UnknownOp(u8),
    #[error("declared lengths exceed buffer: key {key} + value {value}, got {got}")]
    LengthMismatch { key: usize, value: usize, got: usize },
    #[error("key {key} + value {value} bytes exceed the {budget}-byte packet budget")]
    OverBudget { key: usize, value: usize, budget: usize },
}

impl Message {
    pub fn new(op: OpCode, seq: u32, hkey: u128, key: Arc<[u8]>, value: Arc<[u8]>) -> Message {
        Message {
            op,
            seq,
            hkey,
            flag: 0,
            key,
            value,
            src: Endpoint::UNSPECIFIED,
            dst: Endpoint::UNSPECIFIED,
            meta: Meta::default(),
        }
    }

    /// Key+value must fit the packet budget and the u16 length framing.
    pub fn validate(&self) -> Result<(), CodecError> {
        let (k, v) = (self.key.len(), self.value.len());
        if k + v > PAYLOAD_BUDGET || k > u16::MAX as usize || v > u16::MAX as usize {
            return Err(CodecError::OverBudget { key: k, value: v, budget: PAYLOAD_BUDGET });
        }
        Ok(())
    }

    /// Bytes on the wire for this message, including transport overhead.
    /// Used for serialization-delay accounting.
    pub fn wire_size(&self) -> usize {
        TRANSPORT_OVERHEAD + MIN_WIRE_LEN + self.key.len() + self.value.len()
    }
}

/// Serialize the bit-exact wire region. Addressing is not encoded.
pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    msg.validate()?;
    let mut out = Vec::with_capacity(MIN_WIRE_LEN + msg.key.len() + msg.value.len());
    out.push(msg.op as u8);
    out.extend_from_slice(&msg.seq.to_be_bytes());
    out.extend_from_slice(&msg.hkey.to_be_bytes());
    out.push(msg.flag);
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&(msg.key.len() as u16).to_be_bytes());
    out.extend_from_slice(&(msg.value.len() as u16).to_be_bytes());
    out.extend_from_slice(&msg.key);
    out.extend_from_slice(&msg.value);
    out.push(msg.meta.cached);
    out.extend_from_slice(&msg.meta.latency_us.to_be_bytes());
    out.push(msg.meta.srv_id);
    Ok(out)
}

/// Decode one message. The result carries unspecified addressing; the
/// carrier supplies it out of band.
pub fn decode(buf: &[u8]) -> Result<Message, CodecError> {
    if buf.len() < MIN_WIRE_LEN {
        return Err(CodecError::Truncated { need: MIN_WIRE_LEN, got: buf.len() });
    }
    let op = OpCode::from_wire(buf[0]).ok_or(CodecError::UnknownOp(buf[0]))?;
    let seq = u32::from_be_bytes(buf[1..5].try_into().unwrap());
    let hkey = u128::from_be_bytes(buf[5..21].try_into().unwrap());
    let flag = buf[21];
    let klen = u16::from_be_bytes(buf[22..24].try_into().unwrap()) as usize;
    let vlen = u16::from_be_bytes(buf[24..26].try_into().unwrap()) as usize;
    let need = MIN_WIRE_LEN + klen + vlen;
    if buf.len() != need {
        return Err(CodecError::LengthMismatch { key: klen, value: vlen, got: buf.len() });
    }
    let key: Arc<[u8]> = buf[26..26 + klen].into();
    let value: Arc<[u8]> = buf[26 + klen..26 + klen + vlen].into();
    let tail = &buf[26 + klen + vlen..];
    let meta = Meta {
        cached: tail[0],
        latency_us: u32::from_be_bytes(tail[1..5].try_into().unwrap()),
        srv_id: tail[5],
    };
    let mut msg = Message::new(op, seq, hkey, key, value);
    msg.flag = flag;
    msg.meta = meta;
    msg.validate()?;
    Ok(msg)
}

// --- key hashing ------------------------------------------------------

const FNV128_OFFSET: u128 = 0x6C62272E07BB014262B821756295C58D;
const FNV128_PRIME: u128 = 0x1000000000000000000013B;

/// FNV-1a over the key bytes, full 128-bit width. Seedless and stable;
/// golden digests are pinned in the tests.
pub fn hash_key(key: &[u8]) -> u128 {
    let mut h = FNV128_OFFSET;
    for &b in key {
        h ^= b as u128;
        h = h.wrapping_mul(FNV128_PRIME);
    }
    h
}

/// FNV-1a over the seed bytes (big-endian) then the key bytes. Sketch rows
/// use distinct seeds to decorrelate their collisions.
pub fn hash_key_seeded(seed: u64, key: &[u8]) -> u128 {
    let mut h = FNV128_OFFSET;
    for &b in seed.to_be_bytes().iter().chain(key) {
        h ^= b as u128;
        h = h.wrapping_mul(FNV128_PRIME);
    }
    h
}

/// Hash with a test-mode effective width: keep the low `width_bits` bits,
/// zero the rest. Width 0 or >= 128 means the full digest.
pub fn hash_key_truncated(key: &[u8], width_bits: u32) -> u128 {
    let h = hash_key(key);
    if width_bits == 0 || width_bits >= 128 {
        h
    } else {
        h & ((1u128 << width_bits) - 1)
    }
}

/// Home server for a key hash: top 16 bits of the effective hash modulo the
/// server count.
pub fn partition(hkey: u128, servers: usize) -> usize {
    assert!(servers > 0, "partition requires at least one server");
    ((hkey >> 112) as u16 as usize) % servers
}
