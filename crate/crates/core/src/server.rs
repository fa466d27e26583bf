//! Rate-limited partitioned key-value server. Serves reads, writes, fetches
//! and corrections; appends the stored value to write replies for cached
//! keys; tracks per-key popularity in a count-min sketch and periodically
//! reports the hottest keys upstream.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::messages::{hash_key_seeded, partition, Endpoint, Message, Meta, OpCode};

/// Reply flag marking a read for a key the server does not hold. Ordinary
/// read replies carry flag 0 (or a small fragment count), so the marker is
/// unambiguous.
pub const NOT_FOUND_FLAG: u8 = 0xFF;

/// Well-known 64-bit mixing constants, one per sketch row. Fixed so runs
/// are reproducible bit for bit.
const CMS_SEEDS: [u64; 5] = [
    0x9E37_79B9_7F4A_7C15, // 2^64 / golden ratio
    0xC2B2_AE3D_27D4_EB4F, // xxhash64 prime 2
    0x1656_67B1_9E37_79F9, // xxhash64 prime 5
    0x2545_F491_4F6C_DD1D, // xorshift* multiplier
    0xFF51_AFD7_ED55_8CCD, // murmur3 finalizer
];

pub const CMS_DEPTH: usize = 5;
pub const DEFAULT_CMS_WIDTH: usize = 65_536;
/// Exact-count candidates kept alongside the sketch; bounds memory while a
/// period accumulates.
pub const TOPK_CANDIDATE_LIMIT: usize = 4_096;

pub struct CountMinSketch {
    width: usize,
    rows: Vec<Vec<u64>>,
}

impl CountMinSketch {
    pub fn new(width: usize) -> CountMinSketch {
        assert!(width > 0);
        CountMinSketch { width, rows: vec![vec![0; width]; CMS_DEPTH] }
    }

    fn index(&self, row: usize, key: &[u8]) -> usize {
        (hash_key_seeded(CMS_SEEDS[row], key) % self.width as u128) as usize
    }

    pub fn update(&mut self, key: &[u8]) -> u64 {
        let mut est = u64::MAX;
        for row in 0..CMS_DEPTH {
            let i = self.index(row, key);
            self.rows[row][i] += 1;
            est = est.min(self.rows[row][i]);
        }
        est
    }

    pub fn estimate(&self, key: &[u8]) -> u64 {
        (0..CMS_DEPTH)
            .map(|row| self.rows[row][self.index(row, key)])
            .min()
            .unwrap()
    }

    pub fn reset(&mut self) {
        for row in &mut self.rows {
            row.fill(0);
        }
    }

    #[cfg(test)]
    fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|&c| c == 0))
    }
}

/// Bounded candidate set for top-k reporting. Admission threshold slides up
/// as the set fills: a key enters only by beating the current minimum
/// estimate, so heavy keys displace light ones.
struct TopkCandidates {
    limit: usize,
    by_key: HashMap<Arc<[u8]>, u64>,
    ordered: BTreeSet<(u64, Arc<[u8]>)>,
}

impl TopkCandidates {
    fn new(limit: usize) -> TopkCandidates {
        TopkCandidates { limit, by_key: HashMap::new(), ordered: BTreeSet::new() }
    }

    fn touch(&mut self, key: &Arc<[u8]>, estimate: u64) {
        if let Some(est) = self.by_key.get_mut(key) {
            self.ordered.remove(&(*est, key.clone()));
            *est = estimate;
            self.ordered.insert((estimate, key.clone()));
            return;
        }
        if self.by_key.len() >= self.limit {
            let min = self.ordered.first().cloned().expect("limit > 0");
            if estimate <= min.0 {
                return;
            }
            self.ordered.remove(&min);
            self.by_key.remove(&min.1);
        }
        self.by_key.insert(key.clone(), estimate);
        self.ordered.insert((estimate, key.clone()));
    }

    #[cfg(test)]
    fn len(&self) -> usize {
        self.by_key.len()
    }

    fn drain_sorted_desc(&mut self) -> Vec<Arc<[u8]>> {
        let mut keys: Vec<Arc<[u8]>> = Vec::with_capacity(self.by_key.len());
        while let Some((_, k)) = self.ordered.pop_last() {
            keys.push(k);
        }
        self.by_key.clear();
        keys
    }
}

/// FIFO admission at a fixed service rate. Departure times are exact queue
/// arithmetic: the nth of a burst departs (n-1)/rate after the first.
pub struct ServiceQueue {
    period_ns: u64,
    next_free_ns: u64,
    pub admitted: u64,
}

impl ServiceQueue {
    pub fn new(rate_rps: u64) -> ServiceQueue {
        assert!(rate_rps > 0);
        ServiceQueue {
            period_ns: 1_000_000_000u64.div_ceil(rate_rps),
            next_free_ns: 0,
            admitted: 0,
        }
    }

    pub fn admit(&mut self, arrival_ns: u64) -> u64 {
        let departure = arrival_ns.max(self.next_free_ns);
        self.next_free_ns = departure + self.period_ns;
        self.admitted += 1;
        departure
    }

    pub fn backlog_at(&self, now_ns: u64) -> u64 {
        (self.next_free_ns.saturating_sub(now_ns)) / self.period_ns
    }
}

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct ServerStats {
    pub reads: u64,
    pub writes: u64,
    pub fetches: u64,
    pub corrections: u64,
    pub not_found: u64,
}

/// Deliberate misbehavior switches for validation runs. All off in normal
/// operation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ServerFaults {
    /// When nonzero, write replies depart on time but the store mutation is
    /// held back this many ns past the departure. Readers (and the cache,
    /// which revalidates from the reply) can then observe a value the store
    /// does not hold yet.
    pub premature_apply_lag_ns: u64,
}

pub struct StorageServer {
    pub server_id: u8,
    pub partition_id: u16,
    server_count: u16,
    node: u16,
    items: HashMap<Arc<[u8]>, Arc<[u8]>>,
    sketch: CountMinSketch,
    candidates: TopkCandidates,
    pub queue: ServiceQueue,
    pub stats: ServerStats,
    period_id: u64,
    pub faults: ServerFaults,
    held_writes: VecDeque<(Arc<[u8]>, Arc<[u8]>)>,
}

impl StorageServer {
    pub fn new(server_id: u8, node: u16, server_count: u16, rate_rps: u64, cms_width: usize) -> StorageServer {
        StorageServer {
            server_id,
            partition_id: server_id as u16,
            server_count,
            node,
            items: HashMap::new(),
            sketch: CountMinSketch::new(cms_width),
            candidates: TopkCandidates::new(TOPK_CANDIDATE_LIMIT),
            queue: ServiceQueue::new(rate_rps),
            stats: ServerStats::default(),
            period_id: 0,
            faults: ServerFaults::default(),
            held_writes: VecDeque::new(),
        }
    }

    pub fn node(&self) -> u16 {
        self.node
    }

    /// Load an item without traffic (startup population).
    pub fn preload(&mut self, key: Arc<[u8]>, value: Arc<[u8]>) {
        self.items.insert(key, value);
    }

    pub fn get(&self, key: &[u8]) -> Option<&Arc<[u8]>> {
        self.items.get(key)
    }

    /// Serve one request. Returns the departure time (service completion)
    /// and the reply to emit at that time. A key routed to the wrong
    /// partition is a simulation bug, not a protocol condition.
    pub fn handle_request(&mut self, msg: &Message, now_ns: u64) -> (u64, Message) {
        let owner = partition(msg.hkey, self.server_count as usize) as u16;
        assert_eq!(
            owner, self.partition_id,
            "misrouted key: partition {owner} reached server {}",
            self.partition_id
        );
        let departure = self.queue.admit(now_ns);
        let est = self.sketch.update(&msg.key);
        self.candidates.touch(&msg.key, est);

        let (op, flag, value): (OpCode, u8, Arc<[u8]>) = match msg.op {
            OpCode::ReadRequest | OpCode::CorrectionRequest => {
                if msg.op == OpCode::CorrectionRequest {
                    self.stats.corrections += 1;
                } else {
                    self.stats.reads += 1;
                }
                match self.items.get(&msg.key) {
                    Some(v) => (OpCode::ReadReply, 0, v.clone()),
                    None => {
                        self.stats.not_found += 1;
                        (OpCode::ReadReply, NOT_FOUND_FLAG, Arc::from(&[][..]))
                    }
                }
            }
            OpCode::WriteRequest => {
                self.stats.writes += 1;
                if self.faults.premature_apply_lag_ns > 0 {
                    self.held_writes.push_back((msg.key.clone(), msg.value.clone()));
                } else {
                    self.items.insert(msg.key.clone(), msg.value.clone());
                }
                // flag=1 marks a cache-invalidated write; the reply must
                // carry the value so the switch can revalidate from it.
                if msg.flag == 1 {
                    (OpCode::WriteReply, 1, msg.value.clone())
                } else {
                    (OpCode::WriteReply, 0, Arc::from(&[][..]))
                }
            }
            OpCode::FetchRequest => {
                self.stats.fetches += 1;
                match self.items.get(&msg.key) {
                    Some(v) => (OpCode::FetchReply, 1, v.clone()),
                    None => {
                        self.stats.not_found += 1;
                        (OpCode::FetchReply, NOT_FOUND_FLAG, Arc::from(&[][..]))
                    }
                }
            }
            other => panic!("server received non-request op {other:?}"),
        };

        let mut reply = Message::new(op, msg.seq, msg.hkey, msg.key.clone(), value);
        reply.flag = flag;
        reply.src = Endpoint::new(self.node, msg.dst.port);
        reply.dst = msg.src;
        reply.meta = Meta { cached: 0, latency_us: 0, srv_id: self.server_id };
        (departure, reply)
    }

    /// Commit the oldest held-back write (premature-reply fault runs only).
    /// The caller times this against the departure it observed.
    pub fn apply_next_held_write(&mut self) -> Option<(Arc<[u8]>, Arc<[u8]>)> {
        let (k, v) = self.held_writes.pop_front()?;
        self.items.insert(k.clone(), v.clone());
        Some((k, v))
    }

    /// The k hottest keys this period by sketch estimate, descending, ties
    /// broken by key bytes for determinism. Resets the sketch and the
    /// candidate set afterward.
    pub fn report_topk(&mut self, k: usize) -> (u64, Vec<(Arc<[u8]>, u64)>) {
        assert!(k >= 1);
        let mut scored: Vec<(Arc<[u8]>, u64)> = self
            .candidates
            .drain_sorted_desc()
            .into_iter()
            .map(|key| {
                let est = self.sketch.estimate(&key);
                (key, est)
            })
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        self.sketch.reset();
        self.period_id += 1;
        (self.period_id, scored)
    }
}


#[cfg(test)]
impl StorageServer {
    /// Test hook: popularity update without the service queue.
    fn sketch_touch(&mut self, key: &[u8]) {
        let key: Arc<[u8]> = key.into();
        let est = self.sketch.update(&key);
        self.candidates.touch(&key, est);
    }

    fn post_reset_estimate_is_zero(&self, key: &[u8]) -> bool {
        self.sketch.estimate(key) == 0
    }
}
