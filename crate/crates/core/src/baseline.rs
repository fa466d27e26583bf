//! Comparison switch models: NoCache (pure forwarding) and NetCache (an
//! exact-key value cache in switch memory, limited to small items, serving
//! hits straight from the pipeline with no recirculation).

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::messages::{Endpoint, Message, Meta, OpCode};
use crate::server::NOT_FOUND_FLAG;
use crate::switchd::ORBIT_PORT;

#[derive(Debug)]
pub enum BaselineAction {
    Forward { port: u16, msg: Message },
    /// Switch-synthesized reply (cache hit); leaves at pipeline delay.
    Reply(Message),
}

fn forward(msg: Message) -> BaselineAction {
    BaselineAction::Forward { port: msg.dst.node, msg }
}

// --- NoCache ---------------------------------------------------------------

#[derive(Debug, Default)]
pub struct NoCacheSwitch {
    pub forwarded: u64,
}

impl NoCacheSwitch {
    pub fn process(&mut self, msg: Message) -> BaselineAction {
        self.forwarded += 1;
        forward(msg)
    }
}

// --- NetCache ----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NetCacheConfig {
    pub capacity: usize,
    pub key_limit: usize,
    pub value_limit: usize,
}

impl Default for NetCacheConfig {
    fn default() -> NetCacheConfig {
        NetCacheConfig { capacity: 1024, key_limit: 16, value_limit: 128 }
    }
}

struct NetEntry {
    key: Arc<[u8]>,
    value: Option<Arc<[u8]>>,
    valid: bool,
    hits: u64,
}

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct NetCacheTotals {
    pub cache_hits: u64,
    pub served: u64,
    pub invalid_forwards: u64,
    pub invalidations: u64,
    pub validations: u64,
    pub oversize_rejects: u64,
    pub plain_forwards: u64,
}

/// Exact-key in-memory cache: a hit synthesizes the reply in the pipeline,
/// so there is no request table, no recirculation, and no collision case.
pub struct NetCacheSwitch {
    cfg: NetCacheConfig,
    slots: Vec<Option<NetEntry>>,
    index: HashMap<Arc<[u8]>, usize>,
    period_hits: u64,
    pub totals: NetCacheTotals,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetCacheError {
    #[error("key exceeds the key size limit")]
    KeyTooLarge,
    #[error("value exceeds the value size limit")]
    ValueTooLarge,
    #[error("cache full")]
    Full,
    #[error("slot conflict")]
    Conflict,
    #[error("key not cached")]
    NotFound,
}

impl NetCacheSwitch {
    pub fn new(cfg: NetCacheConfig) -> NetCacheSwitch {
        let capacity = cfg.capacity;
        NetCacheSwitch {
            cfg,
            slots: (0..capacity).map(|_| None).collect(),
            index: HashMap::new(),
            period_hits: 0,
            totals: NetCacheTotals::default(),
        }
    }

    pub fn config(&self) -> &NetCacheConfig {
        &self.cfg
    }

    pub fn process(&mut self, msg: Message, now_ns: u64) -> BaselineAction {
        let _ = now_ns;
        if msg.src.port != ORBIT_PORT && msg.dst.port != ORBIT_PORT {
            self.totals.plain_forwards += 1;
            return forward(msg);
        }
        match msg.op {
            OpCode::ReadRequest => self.read_request(msg),
            OpCode::WriteRequest => self.write_request(msg),
            OpCode::WriteReply | OpCode::FetchReply => self.reply_with_value(msg),
            _ => forward(msg),
        }
    }

    fn read_request(&mut self, msg: Message) -> BaselineAction {
        let Some(&slot) = self.index.get(&msg.key) else {
            return forward(msg);
        };
        let entry = self.slots[slot].as_mut().expect("indexed slot occupied");
        entry.hits += 1;
        self.period_hits += 1;
        self.totals.cache_hits += 1;
        let (true, Some(value)) = (entry.valid, entry.value.clone()) else {
            self.totals.invalid_forwards += 1;
            return forward(msg);
        };
        self.totals.served += 1;
        let mut rep = Message::new(OpCode::ReadReply, msg.seq, msg.hkey, msg.key, value);
        rep.src = Endpoint::new(msg.dst.node, ORBIT_PORT);
        rep.dst = msg.src;
        rep.meta = Meta { cached: 1, latency_us: 0, srv_id: u8::MAX };
        BaselineAction::Reply(rep)
    }

    fn write_request(&mut self, mut msg: Message) -> BaselineAction {
        if let Some(&slot) = self.index.get(&msg.key) {
            let entry = self.slots[slot].as_mut().unwrap();
            if entry.valid {
                self.totals.invalidations += 1;
            }
            entry.valid = false;
            msg.flag = 1;
        }
        forward(msg)
    }

    fn reply_with_value(&mut self, msg: Message) -> BaselineAction {
        if msg.flag == 0 || msg.flag == NOT_FOUND_FLAG || msg.value.is_empty() {
            return forward(msg);
        }
        if self.index.contains_key(&msg.key) {
            match self.validate(&msg.key, msg.value.clone()) {
                Ok(()) => self.totals.validations += 1,
                Err(_) => self.totals.oversize_rejects += 1,
            }
        }
        forward(msg)
    }

    /// Store a value for an inserted key; both limits are enforced here, on
    /// every insertion, so the cache can never hold an oversize item.
    pub fn validate(&mut self, key: &Arc<[u8]>, value: Arc<[u8]>) -> Result<(), NetCacheError> {
        if key.len() > self.cfg.key_limit {
            return Err(NetCacheError::KeyTooLarge);
        }
        if value.len() > self.cfg.value_limit {
            return Err(NetCacheError::ValueTooLarge);
        }
        let slot = *self.index.get(key).ok_or(NetCacheError::NotFound)?;
        let entry = self.slots[slot].as_mut().unwrap();
        entry.value = Some(value);
        entry.valid = true;
        Ok(())
    }

    // --- control-plane interface ------------------------------------------

    pub fn insert_entry(&mut self, key: Arc<[u8]>, slot: usize) -> Result<(), NetCacheError> {
        if key.len() > self.cfg.key_limit {
            return Err(NetCacheError::KeyTooLarge);
        }
        if slot >= self.slots.len() {
            return Err(NetCacheError::Full);
        }
        if self.slots[slot].is_some() || self.index.contains_key(&key) {
            return Err(NetCacheError::Conflict);
        }
        self.slots[slot] = Some(NetEntry { key: key.clone(), value: None, valid: false, hits: 0 });
        self.index.insert(key, slot);
        Ok(())
    }

    pub fn evict_entry(&mut self, key: &Arc<[u8]>) -> Result<usize, NetCacheError> {
        let slot = self.index.remove(key).ok_or(NetCacheError::NotFound)?;
        self.slots[slot] = None;
        Ok(slot)
    }

    pub fn read_and_reset_counters(&mut self) -> (Vec<(usize, Arc<[u8]>, u64)>, u64) {
        let mut popularity = Vec::new();
        for (slot, entry) in self.slots.iter_mut().enumerate() {
            if let Some(e) = entry {
                popularity.push((slot, e.key.clone(), e.hits));
                e.hits = 0;
            }
        }
        let hits = self.period_hits;
        self.period_hits = 0;
        (popularity, hits)
    }

    pub fn free_slots(&self) -> Vec<usize> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.is_none().then_some(i)).collect()
    }

    pub fn entry_count(&self) -> usize {
        self.index.len()
    }

    pub fn stored_count(&self) -> usize {
        self.slots.iter().flatten().filter(|e| e.value.is_some()).count()
    }

    pub fn is_cached(&self, key: &[u8]) -> bool {
        self.index.contains_key(key)
    }

    pub fn is_valid(&self, key: &[u8]) -> bool {
        self.index
            .get(key)
            .and_then(|&s| self.slots[s].as_ref())
            .is_some_and(|e| e.valid)
    }

    pub fn max_stored_lens(&self) -> (usize, usize) {
        let mut k = 0;
        let mut v = 0;
        for e in self.slots.iter().flatten() {
            k = k.max(e.key.len());
            if let Some(val) = &e.value {
                v = v.max(val.len());
            }
        }
        (k, v)
    }
}

// --- NetCache control plane -----------------------------------------------

/// Periodic top-k driven replacement, sharing the fetch/timeout discipline
/// of the main controller but acting on exact keys. Keys whose fetched
/// value exceeds the limits are blacklisted instead of retried.
pub struct NetCacheController {
    pub target_size: usize,
    pub topk: usize,
    pub fetch_timeout_ns: u64,
    pub fetch_retries: u32,
    server_nodes: Vec<u16>,
    switch_node: u16,
    reports: Vec<(Arc<[u8]>, u64)>,
    fetches: HashMap<Arc<[u8]>, (u32, u64)>,
    token_index: HashMap<u64, Arc<[u8]>>,
    rejected: HashSet<Arc<[u8]>>,
    next_token: u64,
    next_seq: u32,
    pub rollbacks: u64,
}

/// A fetch attempt to put on the wire, same contract as the main
/// controller's.
pub struct NetFetchCmd {
    pub token: u64,
    pub msg: Message,
    pub timeout_ns: u64,
}

impl NetCacheController {
    pub fn new(switch_node: u16, server_nodes: Vec<u16>, target_size: usize) -> NetCacheController {
        NetCacheController {
            target_size,
            topk: target_size * 2,
            fetch_timeout_ns: 10_000_000,
            fetch_retries: 5,
            server_nodes,
            switch_node,
            reports: Vec::new(),
            fetches: HashMap::new(),
            token_index: HashMap::new(),
            rejected: HashSet::new(),
            next_token: 0,
            next_seq: 0,
            rollbacks: 0,
        }
    }

    pub fn on_report(&mut self, entries: Vec<(Arc<[u8]>, u64)>) {
        self.reports.extend(entries);
    }

    fn fetch_attempt(&mut self, key: Arc<[u8]>, home: u16) -> NetFetchCmd {
        let token = self.next_token;
        self.next_token += 1;
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        self.token_index.insert(token, key.clone());
        let hkey = crate::messages::hash_key(&key);
        let mut msg = Message::new(OpCode::FetchRequest, seq, hkey, key, Arc::from(&[][..]));
        msg.src = Endpoint::new(self.switch_node, ORBIT_PORT);
        msg.dst = Endpoint::new(home, ORBIT_PORT);
        NetFetchCmd { token, msg, timeout_ns: self.fetch_timeout_ns }
    }

    fn home(&self, key: &[u8]) -> u16 {
        let hkey = crate::messages::hash_key(key);
        self.server_nodes[crate::messages::partition(hkey, self.server_nodes.len())]
    }

    pub fn on_period(&mut self, sw: &mut NetCacheSwitch) -> Vec<NetFetchCmd> {
        let (popularity, _hits) = sw.read_and_reset_counters();
        let mut merged: HashMap<Arc<[u8]>, u64> = HashMap::new();
        for (key, count) in self.reports.drain(..) {
            if sw.is_cached(&key) || self.rejected.contains(&key) {
                continue;
            }
            let e = merged.entry(key).or_insert(0);
            *e = (*e).max(count);
        }
        let mut uncached: Vec<(Arc<[u8]>, u64)> = merged.into_iter().collect();
        uncached.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        uncached.truncate(self.topk);

        #[derive(Clone)]
        enum Origin {
            Cached,
            New,
        }
        let mut all: Vec<(Arc<[u8]>, u64, Origin)> = Vec::new();
        for (_, key, count) in &popularity {
            all.push((key.clone(), *count, Origin::Cached));
        }
        for (key, count) in &uncached {
            all.push((key.clone(), *count, Origin::New));
        }
        all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = all.len().min(self.target_size);

        let mut cmds = Vec::new();
        for (key, _, origin) in &all[keep..] {
            if matches!(origin, Origin::Cached) {
                sw.evict_entry(key).expect("evicting a live entry");
                self.drop_fetch(key);
            }
        }
        let free = sw.free_slots();
        let mut pool = free.into_iter();
        for (key, _, origin) in &all[..keep] {
            if matches!(origin, Origin::New) {
                let slot = pool.next().expect("pool covers insertions");
                match sw.insert_entry(key.clone(), slot) {
                    Ok(()) => {
                        self.fetches.insert(key.clone(), (self.fetch_retries, 0));
                        let home = self.home(key);
                        let cmd = self.fetch_attempt(key.clone(), home);
                        self.fetches.get_mut(key).unwrap().1 = cmd.token;
                        cmds.push(cmd);
                    }
                    Err(NetCacheError::KeyTooLarge) => {
                        self.rejected.insert(key.clone());
                    }
                    Err(e) => panic!("planned insertion failed: {e}"),
                }
            }
        }
        cmds
    }

    fn drop_fetch(&mut self, key: &Arc<[u8]>) {
        if let Some((_, token)) = self.fetches.remove(key) {
            self.token_index.remove(&token);
        }
    }

    /// F-REP observed. An oversize value (the switch refused to store it)
    /// or a missing key rolls the insertion back and blacklists the key so
    /// later periods skip it.
    pub fn on_fetch_reply(&mut self, msg: &Message, sw: &mut NetCacheSwitch) {
        if !self.fetches.contains_key(&msg.key) {
            return;
        }
        let ok = msg.flag != 0 && msg.flag != NOT_FOUND_FLAG && !msg.value.is_empty()
            && sw.is_valid(&msg.key);
        self.drop_fetch(&msg.key);
        if !ok {
            if sw.is_cached(&msg.key) {
                sw.evict_entry(&msg.key).unwrap();
            }
            self.rejected.insert(msg.key.clone());
            self.rollbacks += 1;
        }
    }

    pub fn on_fetch_timer(&mut self, token: u64, sw: &mut NetCacheSwitch) -> Option<NetFetchCmd> {
        let key = self.token_index.remove(&token)?;
        let (retries_left, current) = self.fetches.get_mut(&key)?;
        if *current != token {
            return None;
        }
        if *retries_left == 0 {
            self.drop_fetch(&key);
            if sw.is_cached(&key) {
                sw.evict_entry(&key).unwrap();
            }
            self.rollbacks += 1;
            return None;
        }
        *retries_left -= 1;
        let home = self.home(&key);
        let cmd = self.fetch_attempt(key.clone(), home);
        self.fetches.get_mut(&key).unwrap().1 = cmd.token;
        Some(cmd)
    }

    /// Install candidate keys at startup; value sizes are learned from the
    /// fetch replies, so oversize candidates resolve to rejects.
    pub fn preload(&mut self, keys: &[Arc<[u8]>], sw: &mut NetCacheSwitch) -> Vec<NetFetchCmd> {
        let mut free = sw.free_slots().into_iter();
        let mut cmds = Vec::new();
        for key in keys.iter().take(self.target_size) {
            let Some(slot) = free.next() else { break };
            match sw.insert_entry(key.clone(), slot) {
                Ok(()) => {
                    self.fetches.insert(key.clone(), (self.fetch_retries, 0));
                    let home = self.home(key);
                    let cmd = self.fetch_attempt(key.clone(), home);
                    self.fetches.get_mut(key).unwrap().1 = cmd.token;
                    cmds.push(cmd);
                }
                Err(_) => {
                    self.rejected.insert(key.clone());
                }
            }
        }
        cmds
    }

    pub fn pending_fetches(&self) -> usize {
        self.fetches.len()
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{hash_key, partition};
    use crate::workload::{make_value, WorkloadConfig, WorkloadGen, ZipfGen};

    fn request(op: OpCode, key: &[u8], seq: u32) -> Message {
        let mut m = Message::new(op, seq, hash_key(key), key.into(), Arc::from(&[][..]));
        m.src = Endpoint::new(3, 50_001);
        m.dst = Endpoint::new(40, ORBIT_PORT);
        m
    }

    #[test]
    fn nocache_forwards_both_directions() {
        let mut sw = NoCacheSwitch::default();
        let req = request(OpCode::ReadRequest, b"K", 1);
        assert!(matches!(sw.process(req), BaselineAction::Forward { port: 40, .. }));
        let mut rep = request(OpCode::ReadReply, b"K", 1);
        rep.dst = Endpoint::new(3, 50_001);
        assert!(matches!(sw.process(rep), BaselineAction::Forward { port: 3, .. }));
        assert_eq!(sw.forwarded, 2);
    }

    // Without a cache, the hottest partition carries the head of the Zipf
    // curve; computed exactly from the pmf, not simulated.
    #[test]
    fn zipf_partition_load_is_heavily_imbalanced() {
        let servers = 32usize;
        let g = WorkloadGen::new(WorkloadConfig { keys: 100_000, ..Default::default() });
        let zipf = ZipfGen::new(100_000, 0.99, 1);
        let by_rank = g.hottest_key_ids(100_000);
        let mut load = vec![0.0f64; servers];
        for rank in 1..=100_000 {
            let key = g.key(by_rank[rank - 1]);
            load[partition(hash_key(key), servers)] += zipf.pmf(rank);
        }
        let max = load.iter().cloned().fold(0.0, f64::max);
        let min = load.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min > 3.0, "max/min partition load = {:.2}", max / min);
    }

    fn cached_switch(key: &[u8], value_len: usize) -> NetCacheSwitch {
        let mut sw = NetCacheSwitch::new(NetCacheConfig::default());
        sw.insert_entry(key.into(), 0).unwrap();
        sw.validate(&Arc::from(key), make_value(key, 0, 0xFF, value_len)).unwrap();
        sw
    }

    #[test]
    fn netcache_hit_is_served_from_the_pipeline() {
        let mut sw = cached_switch(b"SMALL", 64);
        let act = sw.process(request(OpCode::ReadRequest, b"SMALL", 7), 0);
        match act {
            BaselineAction::Reply(rep) => {
                assert_eq!(rep.op, OpCode::ReadReply);
                assert_eq!(rep.seq, 7);
                assert_eq!(rep.dst, Endpoint::new(3, 50_001));
                assert_eq!(rep.meta.cached, 1);
                assert_eq!(rep.value.len(), 64);
            }
            other => panic!("expected Reply, got {other:?}"),
        }
        assert_eq!(sw.totals.served, 1);
    }

    #[test]
    fn netcache_never_stores_oversize_items() {
        let mut sw = NetCacheSwitch::new(NetCacheConfig::default());
        sw.insert_entry(Arc::from(&b"BIG"[..]), 0).unwrap();
        let err = sw.validate(&Arc::from(&b"BIG"[..]), make_value(b"BIG", 0, 0xFF, 1024));
        assert_eq!(err, Err(NetCacheError::ValueTooLarge));
        assert!(!sw.is_valid(b"BIG"));
        // 17-byte key never enters at all.
        let err = sw.insert_entry(Arc::from(&b"17-byte-key-here!"[..]), 1);
        assert_eq!(err, Err(NetCacheError::KeyTooLarge));
        // Reads for it forward to the server.
        let act = sw.process(request(OpCode::ReadRequest, b"BIG", 1), 0);
        assert!(matches!(act, BaselineAction::Forward { .. }));
    }

    #[test]
    fn netcache_write_opens_an_invalidation_window() {
        let mut sw = cached_switch(b"K", 64);
        let act = sw.process(request(OpCode::WriteRequest, b"K", 1), 0);
        match act {
            BaselineAction::Forward { msg, .. } => assert_eq!(msg.flag, 1),
            other => panic!("expected Forward, got {other:?}"),
        }
        // Read in the window forwards to the server.
        let act = sw.process(request(OpCode::ReadRequest, b"K", 2), 0);
        assert!(matches!(act, BaselineAction::Forward { .. }));
        assert_eq!(sw.totals.invalid_forwards, 1);
        // The write reply revalidates with the new value.
        let mut wrep = request(OpCode::WriteReply, b"K", 1);
        wrep.flag = 1;
        wrep.value = make_value(b"K", 2, 1, 64);
        wrep.src = Endpoint::new(40, ORBIT_PORT);
        wrep.dst = Endpoint::new(3, 50_001);
        let act = sw.process(wrep, 10);
        assert!(matches!(act, BaselineAction::Forward { .. }), "reply continues to client");
        assert!(sw.is_valid(b"K"));
        match sw.process(request(OpCode::ReadRequest, b"K", 3), 20) {
            BaselineAction::Reply(rep) => {
                let tag = crate::workload::parse_value(&rep.value).unwrap();
                assert_eq!(tag.version, 2, "hit serves the written value");
            }
            other => panic!("expected Reply, got {other:?}"),
        }
    }

    #[test]
    fn controller_learns_oversize_keys_from_fetch_replies() {
        let mut sw = NetCacheSwitch::new(NetCacheConfig { capacity: 8, ..Default::default() });
        let mut ctl = NetCacheController::new(10, vec![40], 4);
        ctl.on_report(vec![(Arc::from(&b"BIG"[..]), 100), (Arc::from(&b"SMALL"[..]), 50)]);
        let cmds = ctl.on_period(&mut sw);
        assert_eq!(cmds.len(), 2);
        assert_eq!(sw.entry_count(), 2);

        // BIG's fetch returns a 1024-byte value: the switch refuses it,
        // the controller rolls back and blacklists.
        let big_cmd = cmds.iter().find(|c| &c.msg.key[..] == b"BIG").unwrap();
        let mut frep = big_cmd.msg.clone();
        frep.op = OpCode::FetchReply;
        frep.flag = 1;
        frep.value = make_value(b"BIG", 0, 0xFF, 1024);
        std::mem::swap(&mut frep.src, &mut frep.dst);
        let act = sw.process(frep.clone(), 0);
        assert!(matches!(act, BaselineAction::Forward { .. }));
        assert_eq!(sw.totals.oversize_rejects, 1);
        ctl.on_fetch_reply(&frep, &mut sw);
        assert!(!sw.is_cached(b"BIG"));
        assert_eq!(ctl.rollbacks, 1);

        // SMALL's fetch stores fine.
        let small_cmd = cmds.iter().find(|c| &c.msg.key[..] == b"SMALL").unwrap();
        let mut frep = small_cmd.msg.clone();
        frep.op = OpCode::FetchReply;
        frep.flag = 1;
        frep.value = make_value(b"SMALL", 0, 0xFF, 64);
        std::mem::swap(&mut frep.src, &mut frep.dst);
        sw.process(frep.clone(), 0);
        ctl.on_fetch_reply(&frep, &mut sw);
        assert!(sw.is_valid(b"SMALL"));
        assert_eq!(ctl.pending_fetches(), 0);

        // BIG is reported again next period but never refetched.
        ctl.on_report(vec![(Arc::from(&b"BIG"[..]), 100)]);
        let cmds = ctl.on_period(&mut sw);
        assert!(cmds.is_empty());
        assert!(!sw.is_cached(b"BIG"));
    }

    #[test]
    fn netcache_fetch_timeout_retries_then_rolls_back() {
        let mut sw = NetCacheSwitch::new(NetCacheConfig { capacity: 4, ..Default::default() });
        let mut ctl = NetCacheController::new(10, vec![40], 2);
        ctl.fetch_retries = 1;
        ctl.on_report(vec![(Arc::from(&b"K"[..]), 10)]);
        let cmds = ctl.on_period(&mut sw);
        let retry = ctl.on_fetch_timer(cmds[0].token, &mut sw).expect("one retry");
        assert!(ctl.on_fetch_timer(retry.token, &mut sw).is_none());
        assert_eq!(ctl.rollbacks, 1);
        assert!(!sw.is_cached(b"K"));
    }

    proptest::proptest! {
        // Whatever sizes flow in, stored entries respect both limits.
        #[test]
        fn stored_items_respect_limits(
            items in proptest::collection::vec((1usize..32, 16usize..512), 1..40)
        ) {
            let mut sw = NetCacheSwitch::new(NetCacheConfig {
                capacity: 64,
                key_limit: 16,
                value_limit: 128,
            });
            for (i, (klen, vlen)) in items.into_iter().enumerate() {
                let key: Arc<[u8]> = vec![b'a' + (i % 26) as u8; klen].into();
                if sw.insert_entry(key.clone(), i).is_ok() {
                    let _ = sw.validate(&key, make_value(&key, 0, 0xFF, vlen));
                }
            }
            let (k, v) = sw.max_stored_lens();
            proptest::prop_assert!(k <= 16);
            proptest::prop_assert!(v <= 128);
        }
    }
}
