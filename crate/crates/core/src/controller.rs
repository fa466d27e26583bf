//! Control plane co-located with the switch: merges switch popularity
//! counters with server top-k reports, swaps cache entries toward the
//! current popularity ranking, drives value fetching with timeout retry,
//! and adapts the cache size to the overflow ratio.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::messages::{hash_key_truncated, partition, Endpoint, Message, OpCode};
use crate::server::NOT_FOUND_FLAG;
use crate::switchd::{CacheIdx, OrbitSwitch, ORBIT_PORT};

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub period_s: f64,
    /// k for merged top-k consideration; usually 2x the target size.
    pub topk: usize,
    pub fetch_timeout_ns: u64,
    /// Retries after the first attempt.
    pub fetch_retries: u32,
    pub threshold: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub resize_enabled: bool,
    pub initial_target: usize,
    pub hash_width_bits: u32,
    /// Home node per partition.
    pub server_nodes: Vec<u16>,
    /// The switch node this controller manages (F-REQ source address).
    pub switch_node: u16,
}

impl ControllerConfig {
    pub fn basic(switch_node: u16, server_nodes: Vec<u16>, target: usize) -> ControllerConfig {
        ControllerConfig {
            period_s: 1.0,
            topk: target * 2,
            fetch_timeout_ns: 10_000_000,
            fetch_retries: 5,
            threshold: 0.01,
            min_size: 8,
            max_size: 1024,
            resize_enabled: false,
            initial_target: target,
            hash_width_bits: 0,
            server_nodes,
            switch_node,
        }
    }
}

// --- popularity view -------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CachedCount {
    pub idx: CacheIdx,
    pub key: Arc<[u8]>,
    pub count: u64,
}

/// One period's merged popularity. `cached` comes from switch counters,
/// `uncached` from server reports with already-cached keys joined out, so
/// the two sets are disjoint.
#[derive(Debug, Clone)]
pub struct PopularityView {
    pub period_id: u64,
    pub cached: Vec<CachedCount>,
    pub uncached: Vec<(Arc<[u8]>, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdatePlan {
    pub evictions: Vec<(Arc<[u8]>, CacheIdx)>,
    /// (key, index it takes, home node).
    pub insertions: Vec<(Arc<[u8]>, CacheIdx, u16)>,
}

impl UpdatePlan {
    pub fn is_empty(&self) -> bool {
        self.evictions.is_empty() && self.insertions.is_empty()
    }
}

// --- sizing ------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct SizingState {
    pub target_size: usize,
    pub threshold: f64,
    pub min_size: usize,
    pub max_size: usize,
}

impl SizingState {
    pub fn new(target: usize, threshold: f64, min_size: usize, max_size: usize) -> SizingState {
        assert!(min_size >= 1 && min_size <= max_size);
        let target_size = target.clamp(min_size, max_size);
        SizingState { target_size, threshold, min_size, max_size }
    }

    /// One sizing step from a period's counters: overflow above the
    /// threshold shrinks (halve), otherwise grow (double), both bounded.
    /// A period with no cache hits reads as ratio 0 and grows.
    pub fn resize(&mut self, overflow: u64, served: u64) -> usize {
        debug_assert!(served >= overflow);
        let ratio = if served == 0 { 0.0 } else { overflow as f64 / served as f64 };
        self.target_size = if ratio > self.threshold {
            (self.target_size / 2).max(self.min_size)
        } else {
            (self.target_size * 2).min(self.max_size)
        };
        self.target_size
    }
}

// --- fetch tracking -----------------------------------------------------------

#[derive(Debug)]
struct FetchState {
    key: Arc<[u8]>,
    home: u16,
    attempts_left: u32,
    current_token: u64,
}

/// A fetch attempt for the harness to put on the wire: send `msg` and call
/// [`Controller::on_fetch_timer`] with `token` after `timeout_ns`.
#[derive(Debug)]
pub struct FetchCmd {
    pub token: u64,
    pub msg: Message,
    pub timeout_ns: u64,
}

// --- period log -----------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct PeriodRecord {
    pub period_id: u64,
    pub evictions: usize,
    pub insertions: usize,
    pub target_size: usize,
    pub overflow_ratio: f64,
    pub cache_hits: u64,
    pub overflow: u64,
    pub rollbacks: u64,
}

pub struct Controller {
    cfg: ControllerConfig,
    /// hkey -> key bytes for every entry the controller has installed.
    shadow: HashMap<u128, Arc<[u8]>>,
    pub sizing: SizingState,
    period_id: u64,
    reports: Vec<(u8, Vec<(Arc<[u8]>, u64)>)>,
    fetches: HashMap<u128, FetchState>,
    token_index: HashMap<u64, u128>,
    next_token: u64,
    next_seq: u32,
    pub rollbacks: u64,
    pub log: Vec<PeriodRecord>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Controller {
        let sizing =
            SizingState::new(cfg.initial_target, cfg.threshold, cfg.min_size, cfg.max_size);
        Controller {
            sizing,
            shadow: HashMap::new(),
            period_id: 0,
            reports: Vec::new(),
            fetches: HashMap::new(),
            token_index: HashMap::new(),
            next_token: 0,
            next_seq: 0,
            rollbacks: 0,
            log: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn hkey(&self, key: &[u8]) -> u128 {
        hash_key_truncated(key, self.cfg.hash_width_bits)
    }

    fn home_node(&self, hkey: u128) -> u16 {
        self.cfg.server_nodes[partition(hkey, self.cfg.server_nodes.len())]
    }

    /// Accumulate one server's top-k report for the current period.
    pub fn on_report(&mut self, server: u8, entries: Vec<(Arc<[u8]>, u64)>) {
        self.reports.push((server, entries));
    }

    /// Merge switch counters and server reports into a disjoint view.
    fn build_view(&mut self, sw: &mut OrbitSwitch) -> (PopularityView, u64, u64) {
        let snap = sw.read_and_reset_counters();
        let cached: Vec<CachedCount> = snap
            .popularity
            .iter()
            .map(|&(idx, hkey, count)| CachedCount {
                idx,
                key: self.shadow.get(&hkey).expect("shadow tracks every entry").clone(),
                count,
            })
            .collect();
        let mut merged: HashMap<Arc<[u8]>, u64> = HashMap::new();
        for (_, entries) in self.reports.drain(..) {
            for (key, count) in entries {
                let e = merged.entry(key).or_insert(0);
                *e = (*e).max(count);
            }
        }
        let mut uncached: Vec<(Arc<[u8]>, u64)> = merged
            .into_iter()
            .filter(|(key, _)| {
                let hkey = hash_key_truncated(key, self.cfg.hash_width_bits);
                !self.shadow.contains_key(&hkey)
            })
            .collect();
        uncached.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        // Under a truncated hash two distinct keys can share a slot key;
        // only the best-ranked one is a candidate, the entry serves both.
        let mut seen = HashSet::new();
        uncached.retain(|(key, _)| seen.insert(hash_key_truncated(key, self.cfg.hash_width_bits)));
        uncached.truncate(self.cfg.topk);
        self.period_id += 1;
        (
            PopularityView { period_id: self.period_id, cached, uncached },
            snap.cache_hits,
            snap.overflow,
        )
    }

    /// The cache set after this plan is the `target_size` most popular keys
    /// of cached ∪ uncached, ties broken lexicographically. Insertions
    /// inherit the indices freed by evictions, then spill to free slots.
    pub fn build_update_plan(
        &self,
        view: &PopularityView,
        target_size: usize,
        free: &[CacheIdx],
    ) -> UpdatePlan {
        #[derive(Clone)]
        enum Origin {
            Cached(CacheIdx),
            Uncached,
        }
        let mut all: Vec<(Arc<[u8]>, u64, Origin)> = Vec::new();
        for c in &view.cached {
            all.push((c.key.clone(), c.count, Origin::Cached(c.idx)));
        }
        for (key, count) in &view.uncached {
            all.push((key.clone(), *count, Origin::Uncached));
        }
        all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = all.len().min(target_size);

        let mut plan = UpdatePlan::default();
        let mut freed: Vec<CacheIdx> = Vec::new();
        for (key, _, origin) in &all[keep..] {
            if let Origin::Cached(idx) = origin {
                plan.evictions.push((key.clone(), *idx));
                freed.push(*idx);
            }
        }
        let mut pool = freed.into_iter().chain(free.iter().copied());
        for (key, _, origin) in &all[..keep] {
            if matches!(origin, Origin::Uncached) {
                let idx = pool.next().expect("eviction+free pool covers insertions");
                let hkey = hash_key_truncated(key, self.cfg.hash_width_bits);
                plan.insertions.push((key.clone(), idx, self.home_node(hkey)));
            }
        }
        plan
    }

    /// Apply a plan to the switch and emit the fetches that will validate
    /// the new entries. Entries stay invalid until their F-REP flows back
    /// through the data plane; this module never marks anything valid.
    pub fn execute_plan(&mut self, plan: &UpdatePlan, sw: &mut OrbitSwitch) -> Vec<FetchCmd> {
        for (key, idx) in &plan.evictions {
            let hkey = self.hkey(key);
            let freed = sw.evict_entry(hkey).expect("evicting a tracked entry");
            debug_assert_eq!(freed, *idx);
            self.shadow.remove(&hkey);
            self.abort_fetch(hkey);
        }
        let mut cmds = Vec::new();
        for (key, idx, home) in &plan.insertions {
            let hkey = self.hkey(key);
            sw.insert_entry(hkey, *idx).expect("planned index is free");
            self.shadow.insert(hkey, key.clone());
            let state = FetchState {
                key: key.clone(),
                home: *home,
                attempts_left: self.cfg.fetch_retries,
                current_token: 0,
            };
            self.fetches.insert(hkey, state);
            cmds.push(self.fetch_attempt(hkey));
        }
        cmds
    }

    fn fetch_attempt(&mut self, hkey: u128) -> FetchCmd {
        let token = self.next_token;
        self.next_token += 1;
        let state = self.fetches.get_mut(&hkey).expect("attempt for live fetch");
        state.current_token = token;
        self.token_index.insert(token, hkey);
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let mut msg =
            Message::new(OpCode::FetchRequest, seq, hkey, state.key.clone(), Arc::from(&[][..]));
        msg.src = Endpoint::new(self.cfg.switch_node, ORBIT_PORT);
        msg.dst = Endpoint::new(state.home, ORBIT_PORT);
        FetchCmd { token, msg, timeout_ns: self.cfg.fetch_timeout_ns }
    }

    fn abort_fetch(&mut self, hkey: u128) {
        if let Some(state) = self.fetches.remove(&hkey) {
            self.token_index.remove(&state.current_token);
        }
    }

    /// A fetch reply reached the controller (after the data plane already
    /// validated the entry and spawned its cache packet).
    pub fn on_fetch_reply(&mut self, msg: &Message, sw: &mut OrbitSwitch) {
        debug_assert_eq!(msg.op, OpCode::FetchReply);
        let hkey = msg.hkey;
        if msg.flag == NOT_FOUND_FLAG || msg.value.is_empty() {
            // The server does not hold the key; the entry can never
            // validate. Roll it back.
            if self.fetches.contains_key(&hkey) {
                self.abort_fetch(hkey);
                self.rollback(hkey, sw);
            }
            return;
        }
        self.abort_fetch(hkey);
    }

    /// Timeout for a fetch attempt: retry while budget remains, otherwise
    /// roll the insertion back.
    pub fn on_fetch_timer(&mut self, token: u64, sw: &mut OrbitSwitch) -> Option<FetchCmd> {
        let hkey = self.token_index.remove(&token)?;
        let state = self.fetches.get_mut(&hkey)?;
        if state.current_token != token {
            return None;
        }
        if state.attempts_left == 0 {
            self.abort_fetch(hkey);
            self.rollback(hkey, sw);
            return None;
        }
        state.attempts_left -= 1;
        Some(self.fetch_attempt(hkey))
    }

    fn rollback(&mut self, hkey: u128, sw: &mut OrbitSwitch) {
        if sw.cache_idx(hkey).is_some() {
            sw.evict_entry(hkey).expect("rollback evicts live entry");
        }
        self.shadow.remove(&hkey);
        self.rollbacks += 1;
    }

    /// Period boundary: harvest counters, merge reports, optionally resize,
    /// plan and execute, emit fetches.
    pub fn on_period(&mut self, sw: &mut OrbitSwitch) -> Vec<FetchCmd> {
        let rollbacks_before = self.rollbacks;
        let (view, served, overflow) = self.build_view(sw);
        let ratio = if served == 0 { 0.0 } else { overflow as f64 / served as f64 };
        if self.cfg.resize_enabled {
            self.sizing.resize(overflow, served);
        }
        let free = sw.free_indices();
        let plan = self.build_update_plan(&view, self.sizing.target_size, &free);
        let cmds = self.execute_plan(&plan, sw);
        self.log.push(PeriodRecord {
            period_id: view.period_id,
            evictions: plan.evictions.len(),
            insertions: plan.insertions.len(),
            target_size: self.sizing.target_size,
            overflow_ratio: ratio,
            cache_hits: served,
            overflow,
            rollbacks: self.rollbacks - rollbacks_before,
        });
        cmds
    }

    /// Install entries directly at startup (before traffic); they validate
    /// through the ordinary fetch path.
    pub fn preload(&mut self, keys: &[Arc<[u8]>], sw: &mut OrbitSwitch) -> Vec<FetchCmd> {
        let mut free = sw.free_indices().into_iter();
        let mut cmds = Vec::new();
        for key in keys {
            if cmds.len() == self.sizing.target_size {
                break;
            }
            let hkey = self.hkey(key);
            if self.shadow.contains_key(&hkey) {
                continue;
            }
            let idx = free.next().expect("preload within capacity");
            sw.insert_entry(hkey, idx).expect("preload into free slot");
            self.shadow.insert(hkey, key.clone());
            self.fetches.insert(
                hkey,
                FetchState {
                    key: key.clone(),
                    home: self.home_node(hkey),
                    attempts_left: self.cfg.fetch_retries,
                    current_token: 0,
                },
            );
            cmds.push(self.fetch_attempt(hkey));
        }
        cmds
    }

    pub fn pending_fetches(&self) -> usize {
        self.fetches.len()
    }

    pub fn cached_key(&self, hkey: u128) -> Option<&Arc<[u8]>> {
        self.shadow.get(&hkey)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::switchd::SwitchConfig;

    fn harness(capacity: usize, target: usize) -> (Controller, OrbitSwitch) {
        let sw = OrbitSwitch::new(SwitchConfig { capacity, queue_slots: 4, ..Default::default() });
        let mut cfg = ControllerConfig::basic(10, vec![40, 41], target);
        cfg.min_size = 1;
        let ctl = Controller::new(cfg);
        (ctl, sw)
    }

    fn key(s: &str) -> Arc<[u8]> {
        s.as_bytes().into()
    }

    fn view(cached: &[(&str, CacheIdx, u64)], uncached: &[(&str, u64)]) -> PopularityView {
        PopularityView {
            period_id: 1,
            cached: cached
                .iter()
                .map(|&(k, idx, count)| CachedCount { idx, key: key(k), count })
                .collect(),
            uncached: uncached.iter().map(|&(k, c)| (key(k), c)).collect(),
        }
    }

    #[test]
    fn plan_swaps_cold_cached_for_hot_uncached() {
        let (ctl, _) = harness(8, 2);
        let v = view(&[("A", 0, 10), ("B", 1, 1)], &[("C", 5)]);
        let plan = ctl.build_update_plan(&v, 2, &[]);
        assert_eq!(plan.evictions, vec![(key("B"), 1)]);
        assert_eq!(plan.insertions.len(), 1);
        assert_eq!(plan.insertions[0].0, key("C"));
        assert_eq!(plan.insertions[0].1, 1, "insertion inherits B's index");
    }

    #[test]
    fn plan_is_empty_when_uncached_keys_are_colder() {
        let (ctl, _) = harness(8, 2);
        let v = view(&[("A", 0, 10), ("B", 1, 6)], &[("C", 5), ("D", 1)]);
        let plan = ctl.build_update_plan(&v, 2, &[]);
        assert!(plan.is_empty());
    }

    #[test]
    fn plan_replaces_everything_after_a_popularity_flip() {
        let (ctl, _) = harness(256, 128);
        let cached: Vec<(String, CacheIdx, u64)> =
            (0..128).map(|i| (format!("old{i:03}"), i, 1u64)).collect();
        let uncached: Vec<(String, u64)> =
            (0..128).map(|i| (format!("new{i:03}"), 100u64)).collect();
        let v = PopularityView {
            period_id: 1,
            cached: cached
                .iter()
                .map(|(k, idx, c)| CachedCount { idx: *idx, key: key(k), count: *c })
                .collect(),
            uncached: uncached.iter().map(|(k, c)| (key(k), *c)).collect(),
        };
        let plan = ctl.build_update_plan(&v, 128, &[]);
        assert_eq!(plan.evictions.len(), 128);
        assert_eq!(plan.insertions.len(), 128);
        let mut freed: Vec<CacheIdx> = plan.evictions.iter().map(|e| e.1).collect();
        let mut taken: Vec<CacheIdx> = plan.insertions.iter().map(|i| i.1).collect();
        freed.sort_unstable();
        taken.sort_unstable();
        assert_eq!(freed, taken, "insertions reuse exactly the freed indices");
    }

    #[test]
    fn plan_shrinks_to_a_smaller_target() {
        let (ctl, _) = harness(8, 4);
        let v = view(&[("A", 0, 10), ("B", 1, 8), ("C", 2, 6), ("D", 3, 4)], &[]);
        let plan = ctl.build_update_plan(&v, 2, &[]);
        assert_eq!(plan.insertions.len(), 0);
        let mut evicted: Vec<Arc<[u8]>> = plan.evictions.iter().map(|e| e.0.clone()).collect();
        evicted.sort();
        assert_eq!(evicted, vec![key("C"), key("D")], "two coldest leave");
    }

    #[test]
    fn ties_break_lexicographically() {
        let (ctl, _) = harness(8, 1);
        // Equal counts: "A" beats "B" by byte order, so cached B is evicted.
        let v = view(&[("B", 0, 5)], &[("A", 5)]);
        let plan = ctl.build_update_plan(&v, 1, &[]);
        assert_eq!(plan.evictions, vec![(key("B"), 0)]);
        assert_eq!(plan.insertions[0].0, key("A"));
    }

    #[test]
    fn sizing_steps() {
        let mut s = SizingState::new(128, 0.01, 8, 1024);
        assert_eq!(s.resize(2, 100), 64, "2% overflow shrinks");
        assert_eq!(s.resize(0, 100), 128, "clean period grows");
        assert_eq!(s.resize(0, 0), 256, "idle period reads as ratio 0");
        let mut s = SizingState::new(1024, 0.01, 8, 1024);
        assert_eq!(s.resize(0, 100), 1024, "growth capped");
        let mut s = SizingState::new(8, 0.01, 8, 1024);
        assert_eq!(s.resize(50, 100), 8, "shrink floored");
    }

    #[test]
    fn execute_leaves_entries_invalid_until_fetch_reply() {
        let (mut ctl, mut sw) = harness(8, 2);
        let v = view(&[], &[("HOT1", 9), ("HOT2", 7)]);
        let plan = ctl.build_update_plan(&v, 2, &sw.free_indices());
        let cmds = ctl.execute_plan(&plan, &mut sw);
        assert_eq!(cmds.len(), 2);
        for cmd in &cmds {
            assert_eq!(cmd.msg.op, OpCode::FetchRequest);
            let idx = sw.cache_idx(cmd.msg.hkey).unwrap();
            assert!(!sw.is_valid(idx), "insertion is invalid until F-REP");
        }
        // F-REP flows through the data plane, then reaches the controller.
        let fetch = &cmds[0].msg;
        let mut frep = Message::new(
            OpCode::FetchReply,
            fetch.seq,
            fetch.hkey,
            fetch.key.clone(),
            crate::workload::make_value(&fetch.key, 0, 0xFF, 64),
        );
        frep.flag = 1;
        frep.src = fetch.dst;
        frep.dst = fetch.src;
        let actions = sw.process_packet(frep.clone(), false, 0);
        assert!(matches!(actions[0], crate::switchd::SwitchAction::CloneMulticast { .. }));
        ctl.on_fetch_reply(&frep, &mut sw);
        let idx = sw.cache_idx(fetch.hkey).unwrap();
        assert!(sw.is_valid(idx));
        assert_eq!(ctl.pending_fetches(), 1, "second fetch still outstanding");
    }

    #[test]
    fn lost_fetch_retries_then_completes() {
        let (mut ctl, mut sw) = harness(8, 1);
        let plan = ctl.build_update_plan(&view(&[], &[("HOT", 9)]), 1, &sw.free_indices());
        let cmds = ctl.execute_plan(&plan, &mut sw);
        let t0 = cmds[0].token;
        // First attempt lost; the timeout produces a retry with a new token.
        let retry = ctl.on_fetch_timer(t0, &mut sw).expect("retry");
        assert_ne!(retry.token, t0);
        assert_eq!(retry.msg.op, OpCode::FetchRequest);
        assert_eq!(ctl.pending_fetches(), 1);
        // A stale timer for the superseded attempt is ignored.
        assert!(ctl.on_fetch_timer(t0, &mut sw).is_none());
        // Reply to the retry completes the fetch.
        let mut frep = retry.msg.clone();
        frep.op = OpCode::FetchReply;
        frep.flag = 1;
        frep.value = crate::workload::make_value(&retry.msg.key, 0, 0xFF, 64);
        std::mem::swap(&mut frep.src, &mut frep.dst);
        sw.process_packet(frep.clone(), false, 0);
        ctl.on_fetch_reply(&frep, &mut sw);
        assert_eq!(ctl.pending_fetches(), 0);
        // Its timer fires later and must be a no-op.
        assert!(ctl.on_fetch_timer(retry.token, &mut sw).is_none());
    }

    #[test]
    fn exhausted_fetch_rolls_the_entry_back() {
        let (mut ctl, mut sw) = harness(8, 1);
        ctl.cfg.fetch_retries = 2;
        let plan = ctl.build_update_plan(&view(&[], &[("HOT", 9)]), 1, &sw.free_indices());
        let cmds = ctl.execute_plan(&plan, &mut sw);
        let hkey = cmds[0].msg.hkey;
        let mut token = cmds[0].token;
        for _ in 0..2 {
            token = ctl.on_fetch_timer(token, &mut sw).expect("retry").token;
        }
        assert!(ctl.on_fetch_timer(token, &mut sw).is_none(), "budget exhausted");
        assert_eq!(ctl.rollbacks, 1);
        assert!(sw.cache_idx(hkey).is_none(), "entry evicted on rollback");
        assert_eq!(ctl.pending_fetches(), 0);
    }

    #[test]
    fn not_found_fetch_reply_rolls_back_immediately() {
        let (mut ctl, mut sw) = harness(8, 1);
        let plan = ctl.build_update_plan(&view(&[], &[("GHOST", 9)]), 1, &sw.free_indices());
        let cmds = ctl.execute_plan(&plan, &mut sw);
        let fetch = &cmds[0].msg;
        let mut frep = Message::new(
            OpCode::FetchReply,
            fetch.seq,
            fetch.hkey,
            fetch.key.clone(),
            Arc::from(&[][..]),
        );
        frep.flag = NOT_FOUND_FLAG;
        ctl.on_fetch_reply(&frep, &mut sw);
        assert_eq!(ctl.rollbacks, 1);
        assert!(sw.cache_idx(fetch.hkey).is_none());
    }

    #[test]
    fn period_flow_converges_to_a_fixed_point() {
        let (mut ctl, mut sw) = harness(8, 2);
        ctl.on_report(0, vec![(key("X"), 50), (key("Y"), 30), (key("Z"), 10)]);
        let cmds = ctl.on_period(&mut sw);
        assert_eq!(cmds.len(), 2, "X and Y get cached");
        assert_eq!(sw.entry_count(), 2);
        assert_eq!(ctl.log.last().unwrap().insertions, 2);

        // Same relative popularity next period: traffic hits X and Y at the
        // switch, Z reported again from the server. No churn.
        let hx = ctl.hkey(b"X");
        let ix = sw.cache_idx(hx).unwrap();
        let _ = ix;
        for (hkey, count) in [(ctl.hkey(b"X"), 50u64), (ctl.hkey(b"Y"), 30)] {
            let idx = sw.cache_idx(hkey).unwrap();
            for _ in 0..count {
                sw.bump_popularity_for_tests(idx);
            }
        }
        ctl.on_report(0, vec![(key("Z"), 10)]);
        let cmds = ctl.on_period(&mut sw);
        assert!(cmds.is_empty(), "fixed point: no fetches");
        let rec = ctl.log.last().unwrap();
        assert_eq!(rec.evictions, 0);
        assert_eq!(rec.insertions, 0);
    }

    #[test]
    fn reports_for_cached_keys_are_joined_out() {
        let (mut ctl, mut sw) = harness(8, 2);
        ctl.on_report(0, vec![(key("X"), 50)]);
        ctl.on_period(&mut sw);
        assert!(sw.cache_idx(ctl.hkey(b"X")).is_some());
        // X is cached now but a server still reports it (overflow traffic).
        ctl.on_report(0, vec![(key("X"), 40), (key("Y"), 5)]);
        let cmds = ctl.on_period(&mut sw);
        // Only Y is a genuine uncached candidate.
        assert_eq!(cmds.len(), 1);
        assert_eq!(&cmds[0].msg.key[..], b"Y");
    }

    #[test]
    fn preload_installs_and_fetches() {
        let (mut ctl, mut sw) = harness(8, 4);
        let keys: Vec<Arc<[u8]>> = (0..4).map(|i| key(&format!("pre{i}"))).collect();
        let cmds = ctl.preload(&keys, &mut sw);
        assert_eq!(cmds.len(), 4);
        assert_eq!(sw.entry_count(), 4);
        assert_eq!(sw.invalid_entry_count(), 4, "preloads validate via F-REP");
    }

    proptest::proptest! {
        // Arbitrary popularity flows keep the table injective and bounded.
        #[test]
        fn plans_preserve_table_invariants(
            periods in proptest::collection::vec(
                proptest::collection::vec((0u16..40, 1u64..100), 1..12),
                1..8,
            )
        ) {
            let (mut ctl, mut sw) = harness(16, 4);
            for entries in periods {
                let report: Vec<(Arc<[u8]>, u64)> = entries
                    .iter()
                    .map(|(k, c)| (key(&format!("k{k:02}")), *c))
                    .collect();
                ctl.on_report(0, report);
                let _ = ctl.on_period(&mut sw);
                proptest::prop_assert!(sw.entry_count() <= 4);
                // Injectivity: every occupied index maps back uniquely.
                let entries = sw.cached_entries();
                let mut idxs: Vec<_> = entries.iter().map(|e| e.0).collect();
                idxs.dedup();
                proptest::prop_assert_eq!(idxs.len(), entries.len());
            }
        }
    }
}
