//! OrbitCache switch data plane: hash lookup, validity state, per-key
//! pending-request queues, cache-packet serving with clone/multicast, and
//! the popularity/overflow counters the control plane harvests.
//!
//! Cached values are not stored in switch memory. A validated entry has a
//! cache packet circulating through the recirculation port; each pipeline
//! pass of that packet can serve at most one pending request.

pub mod request_table;

use std::collections::HashMap;
use std::sync::Arc;

use crate::messages::{CodecError, Endpoint, Message, Meta, OpCode};
use request_table::{PendingMeta, RequestTable};

/// Reserved L4 port; traffic not touching it bypasses all cache logic.
pub const ORBIT_PORT: u16 = 8583;

pub type CacheIdx = usize;

/// Data-plane mutations for coherence mutation testing. All off in normal
/// operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FaultInjection {
    /// Write hits do not invalidate the entry (and do not set flag=1).
    pub skip_invalidate_on_write: bool,
    /// Superseded cache packets are never retired: packets for invalid
    /// entries are served instead of dropped, and validation stops bumping
    /// the packet generation, so a pre-write packet keeps circulating with
    /// the old value after the write validates.
    pub skip_drop_invalid_cache_packet: bool,
}

#[derive(Debug, Clone)]
pub struct SwitchConfig {
    /// Lookup/state/queue capacity in entries.
    pub capacity: usize,
    /// Pending-request slots per key (S).
    pub queue_slots: usize,
    /// Enable flag>1 fragment groups (multi-packet items).
    pub multi_packet: bool,
    /// Drop pending metadata when an entry is evicted.
    pub flush_on_evict: bool,
    pub faults: FaultInjection,
}

impl Default for SwitchConfig {
    fn default() -> SwitchConfig {
        SwitchConfig {
            capacity: 128,
            queue_slots: 8,
            multi_packet: false,
            flush_on_evict: false,
            faults: FaultInjection::default(),
        }
    }
}

/// A circulating cache packet: the reply message plus the validation epoch
/// it was cloned under. A packet whose epoch lags the entry's current epoch
/// predates the latest validation and is dropped at its next pipeline pass,
/// exactly as an outdated packet that revisited during the invalid window
/// would be.
#[derive(Debug, Clone)]
pub struct CachePacket {
    pub msg: Message,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DropReason {
    /// Read request absorbed into the request table; served later.
    RequestAbsorbed,
    /// Cache packet for an evicted key.
    CacheMiss,
    /// Cache packet for an invalidated entry.
    CacheInvalid,
    /// Cache packet predating the entry's latest validation.
    StaleGeneration,
    /// Frame failed to decode.
    BadFrame,
}

#[derive(Debug)]
pub enum SwitchAction {
    Forward { port: u16, msg: Message },
    Drop { msg: Message, reason: DropReason },
    Recirculate { pkt: CachePacket },
    CloneMulticast { to_client: Message, to_recirc: CachePacket },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingress {
    External,
    /// Arrival from the recirculation port, carrying the packet's epoch.
    Recirc { epoch: u64 },
}

/// Lifetime counters; never reset. The per-period counters the controller
/// harvests live separately so metric windows and control periods do not
/// fight over them.
#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct SwitchTotals {
    pub cache_hits: u64,
    pub overflow_forwards: u64,
    pub invalid_forwards: u64,
    pub enqueued: u64,
    pub dequeued: u64,
    pub served: u64,
    pub recirculated: u64,
    pub miss_drops: u64,
    pub invalid_drops: u64,
    pub stale_drops: u64,
    pub validations: u64,
    pub invalidations: u64,
    pub plain_forwards: u64,
    pub frame_errors: u64,
    pub flushed_metadata: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterSnapshot {
    /// (CacheIdx, hkey, hit count) for every occupied entry.
    pub popularity: Vec<(CacheIdx, u128, u64)>,
    pub cache_hits: u64,
    pub overflow: u64,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("cache index {0} out of range")]
    OutOfRange(CacheIdx),
    #[error("cache index {0} already occupied")]
    Occupied(CacheIdx),
    #[error("hkey already cached")]
    DuplicateKey,
    #[error("hkey not cached")]
    NotFound,
}

pub struct OrbitSwitch {
    cfg: SwitchConfig,
    lookup: HashMap<u128, CacheIdx>,
    rev: Vec<Option<u128>>,
    valid: Vec<bool>,
    epoch: Vec<u64>,
    /// Multi-packet serving: ACKed-packet counter per key, rests at 1.
    ack: Vec<u8>,
    /// Multi-packet validation: fragments seen in the current reply group.
    frag_seen: Vec<u8>,
    table: RequestTable,
    popularity: Vec<u64>,
    period_hits: u64,
    period_overflow: u64,
    pub totals: SwitchTotals,
}

impl OrbitSwitch {
    pub fn new(cfg: SwitchConfig) -> OrbitSwitch {
        let cap = cfg.capacity;
        OrbitSwitch {
            table: RequestTable::new(cap, cfg.queue_slots),
            cfg,
            lookup: HashMap::new(),
            rev: vec![None; cap],
            valid: vec![false; cap],
            epoch: vec![0; cap],
            ack: vec![1; cap],
            frag_seen: vec![0; cap],
            popularity: vec![0; cap],
            period_hits: 0,
            period_overflow: 0,
            totals: SwitchTotals::default(),
        }
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.cfg
    }

    fn is_orbit(msg: &Message) -> bool {
        msg.src.port == ORBIT_PORT || msg.dst.port == ORBIT_PORT
    }

    /// One ingress-pipeline pass. All table access happens here, atomically
    /// at `now_ns`; the caller applies the emitted actions.
    pub fn process(&mut self, msg: Message, ingress: Ingress, now_ns: u64, out: &mut Vec<SwitchAction>) {
        if !Self::is_orbit(&msg) {
            self.totals.plain_forwards += 1;
            out.push(Self::forward(msg));
            return;
        }
        match (msg.op, ingress) {
            (OpCode::ReadReply, Ingress::Recirc { epoch }) => {
                self.serve_cache_packet(CachePacket { msg, epoch }, now_ns, out)
            }
            (OpCode::ReadReply, Ingress::External) => out.push(Self::forward(msg)),
            (OpCode::ReadRequest, _) => self.read_request(msg, now_ns, out),
            (OpCode::WriteRequest, _) => self.write_request(msg, out),
            (OpCode::WriteReply, _) | (OpCode::FetchReply, _) => {
                self.write_or_fetch_reply(msg, out)
            }
            (OpCode::FetchRequest, _) | (OpCode::CorrectionRequest, _) => {
                out.push(Self::forward(msg))
            }
        }
    }

    /// Contract-shaped entry point: recirculation ingress uses the entry's
    /// current epoch. The event loop passes real packet epochs via
    /// [`Ingress::Recirc`] instead.
    pub fn process_packet(&mut self, msg: Message, ingress_is_recirc: bool, now_ns: u64) -> Vec<SwitchAction> {
        let ingress = if ingress_is_recirc {
            let epoch = self.lookup.get(&msg.hkey).map(|&c| self.epoch[c]).unwrap_or(0);
            Ingress::Recirc { epoch }
        } else {
            Ingress::External
        };
        let mut out = Vec::new();
        self.process(msg, ingress, now_ns, &mut out);
        out
    }

    /// Raw-frame entry: undecodable frames are dropped and counted.
    pub fn process_frame(&mut self, frame: &[u8], src: Endpoint, dst: Endpoint, now_ns: u64) -> Vec<SwitchAction> {
        match crate::messages::decode(frame) {
            Ok(mut msg) => {
                msg.src = src;
                msg.dst = dst;
                self.process_packet(msg, false, now_ns)
            }
            Err(err) => {
                self.totals.frame_errors += 1;
                let reason = match err {
                    CodecError::UnknownOp(_) => DropReason::BadFrame,
                    _ => DropReason::BadFrame,
                };
                let placeholder = Message::new(
                    OpCode::ReadRequest,
                    0,
                    0,
                    Arc::from(&[][..]),
                    Arc::from(&[][..]),
                );
                vec![SwitchAction::Drop { msg: placeholder, reason }]
            }
        }
    }

    fn forward(msg: Message) -> SwitchAction {
        SwitchAction::Forward { port: msg.dst.node, msg }
    }

    fn read_request(&mut self, msg: Message, now_ns: u64, out: &mut Vec<SwitchAction>) {
        let Some(&c) = self.lookup.get(&msg.hkey) else {
            out.push(Self::forward(msg));
            return;
        };
        // Hit counters tick before the validity/queue stages, so invalid
        // and overflow forwards still count as hits.
        self.popularity[c] += 1;
        self.period_hits += 1;
        self.totals.cache_hits += 1;
        if !self.valid[c] {
            self.totals.invalid_forwards += 1;
            out.push(Self::forward(msg));
            return;
        }
        let meta = PendingMeta {
            client_node: msg.src.node,
            l4port: msg.src.port,
            seq: msg.seq,
            enqueued_ns: now_ns,
        };
        match self.table.enqueue(c, meta) {
            Ok(_) => {
                self.totals.enqueued += 1;
                out.push(SwitchAction::Drop { msg, reason: DropReason::RequestAbsorbed });
            }
            Err(()) => {
                self.period_overflow += 1;
                self.totals.overflow_forwards += 1;
                out.push(Self::forward(msg));
            }
        }
    }

    fn serve_cache_packet(&mut self, pkt: CachePacket, now_ns: u64, out: &mut Vec<SwitchAction>) {
        let Some(&c) = self.lookup.get(&pkt.msg.hkey) else {
            self.totals.miss_drops += 1;
            out.push(SwitchAction::Drop { msg: pkt.msg, reason: DropReason::CacheMiss });
            return;
        };
        if !self.valid[c] && !self.cfg.faults.skip_drop_invalid_cache_packet {
            self.totals.invalid_drops += 1;
            out.push(SwitchAction::Drop { msg: pkt.msg, reason: DropReason::CacheInvalid });
            return;
        }
        if pkt.epoch != self.epoch[c] {
            self.totals.stale_drops += 1;
            out.push(SwitchAction::Drop { msg: pkt.msg, reason: DropReason::StaleGeneration });
            return;
        }
        let flag = pkt.msg.flag;
        let deferred = self.cfg.multi_packet && flag > 1;
        let meta = if deferred { self.table.peek(c) } else { self.table.dequeue(c) };
        let Some(meta) = meta else {
            self.totals.recirculated += 1;
            out.push(SwitchAction::Recirculate { pkt });
            return;
        };
        if deferred {
            if self.ack[c] >= flag {
                self.table.dequeue(c);
                self.totals.dequeued += 1;
                self.ack[c] = 1;
            } else {
                self.ack[c] += 1;
            }
        } else {
            self.totals.dequeued += 1;
        }
        self.totals.served += 1;
        let mut to_client = pkt.msg.clone();
        to_client.op = OpCode::ReadReply;
        to_client.seq = meta.seq;
        to_client.dst = Endpoint::new(meta.client_node, meta.l4port);
        to_client.meta = Meta {
            cached: 1,
            latency_us: ((now_ns.saturating_sub(meta.enqueued_ns)) / 1000).min(u32::MAX as u64)
                as u32,
            srv_id: pkt.msg.meta.srv_id,
        };
        out.push(SwitchAction::CloneMulticast { to_client, to_recirc: pkt });
    }

    fn write_request(&mut self, mut msg: Message, out: &mut Vec<SwitchAction>) {
        if let Some(&c) = self.lookup.get(&msg.hkey) {
            if !self.cfg.faults.skip_invalidate_on_write {
                if self.valid[c] {
                    self.totals.invalidations += 1;
                }
                self.valid[c] = false;
                self.frag_seen[c] = 0;
                msg.flag = 1;
            }
        }
        out.push(Self::forward(msg));
    }

    fn write_or_fetch_reply(&mut self, msg: Message, out: &mut Vec<SwitchAction>) {
        let Some(&c) = self.lookup.get(&msg.hkey) else {
            out.push(Self::forward(msg));
            return;
        };
        // flag=0 replies carry no value (the entry appeared after the
        // request passed); nothing can circulate until the fetch completes.
        if msg.flag == 0 || msg.value.is_empty() {
            out.push(Self::forward(msg));
            return;
        }
        if self.cfg.multi_packet && msg.flag > 1 {
            if self.frag_seen[c] == 0 {
                self.validate(c);
            }
            self.frag_seen[c] += 1;
            if self.frag_seen[c] >= msg.flag {
                self.frag_seen[c] = 0;
            }
        } else {
            self.validate(c);
        }
        let mut circulating = msg.clone();
        circulating.op = OpCode::ReadReply;
        let pkt = CachePacket { msg: circulating, epoch: self.epoch[c] };
        out.push(SwitchAction::CloneMulticast { to_client: msg, to_recirc: pkt });
    }

    fn validate(&mut self, c: CacheIdx) {
        self.valid[c] = true;
        // The generation bump retires any packet from before this validation;
        // the drop-on-invalid fault models a switch that fails to retire
        // superseded packets, so it freezes the generation too.
        if !self.cfg.faults.skip_drop_invalid_cache_packet {
            self.epoch[c] += 1;
        }
        self.ack[c] = 1;
        self.totals.validations += 1;
    }

    // --- control-plane interface ---------------------------------------

    pub fn read_and_reset_counters(&mut self) -> CounterSnapshot {
        let mut popularity = Vec::new();
        for (c, slot) in self.rev.iter().enumerate() {
            if let Some(hkey) = slot {
                popularity.push((c, *hkey, self.popularity[c]));
            }
        }
        for p in &mut self.popularity {
            *p = 0;
        }
        let snap = CounterSnapshot {
            popularity,
            cache_hits: self.period_hits,
            overflow: self.period_overflow,
        };
        self.period_hits = 0;
        self.period_overflow = 0;
        snap
    }

    pub fn insert_entry(&mut self, hkey: u128, c: CacheIdx) -> Result<(), TableError> {
        if c >= self.cfg.capacity {
            return Err(TableError::OutOfRange(c));
        }
        if self.rev[c].is_some() {
            return Err(TableError::Occupied(c));
        }
        if self.lookup.contains_key(&hkey) {
            return Err(TableError::DuplicateKey);
        }
        self.lookup.insert(hkey, c);
        self.rev[c] = Some(hkey);
        self.valid[c] = false;
        self.popularity[c] = 0;
        self.ack[c] = 1;
        self.frag_seen[c] = 0;
        Ok(())
    }

    pub fn evict_entry(&mut self, hkey: u128) -> Result<CacheIdx, TableError> {
        let c = self.lookup.remove(&hkey).ok_or(TableError::NotFound)?;
        self.rev[c] = None;
        self.valid[c] = false;
        if self.cfg.flush_on_evict {
            self.totals.flushed_metadata += self.table.clear(c) as u64;
        }
        Ok(c)
    }

    pub fn set_valid(&mut self, c: CacheIdx, v: bool) -> Result<(), TableError> {
        if c >= self.cfg.capacity {
            return Err(TableError::OutOfRange(c));
        }
        if self.rev[c].is_none() {
            return Err(TableError::NotFound);
        }
        if v && !self.valid[c] {
            // Treated as a validation event so older packets age out.
            self.validate(c);
        } else {
            self.valid[c] = v;
        }
        Ok(())
    }

    // --- introspection ---------------------------------------------------

    pub fn cache_idx(&self, hkey: u128) -> Option<CacheIdx> {
        self.lookup.get(&hkey).copied()
    }

    pub fn is_valid(&self, c: CacheIdx) -> bool {
        self.valid[c]
    }

    pub fn entry_count(&self) -> usize {
        self.lookup.len()
    }

    pub fn invalid_entry_count(&self) -> usize {
        self.rev
            .iter()
            .enumerate()
            .filter(|(c, slot)| slot.is_some() && !self.valid[*c])
            .count()
    }

    pub fn free_indices(&self) -> Vec<CacheIdx> {
        self.rev
            .iter()
            .enumerate()
            .filter_map(|(c, slot)| slot.is_none().then_some(c))
            .collect()
    }

    pub fn cached_entries(&self) -> Vec<(CacheIdx, u128)> {
        let mut v: Vec<(CacheIdx, u128)> = self
            .rev
            .iter()
            .enumerate()
            .filter_map(|(c, slot)| slot.map(|h| (c, h)))
            .collect();
        v.sort_unstable();
        v
    }

    pub fn pending_len(&self, c: CacheIdx) -> usize {
        self.table.len(c)
    }

    pub fn pending_total(&self) -> usize {
        (0..self.cfg.capacity).map(|c| self.table.len(c)).sum()
    }

    #[cfg(test)]
    pub fn bump_popularity_for_tests(&mut self, c: CacheIdx) {
        self.popularity[c] += 1;
        self.period_hits += 1;
    }
}
