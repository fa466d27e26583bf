//! Open-loop client: exponential arrivals, a pending list keyed by sequence
//! number, client-side hash-collision resolution via correction requests,
//! and per-class latency reservoirs.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::messages::{hash_key_truncated, partition, Endpoint, Message, OpCode};
use crate::switchd::ORBIT_PORT;
use crate::workload::{parse_value, value_owned_by, OpKind, RequestSpec, ValueTag};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub node: u16,
    pub l4port: u16,
    pub client_id: u8,
    pub offered_rps: f64,
    /// Effective hash width for collision experiments; 0 = full width.
    pub hash_width_bits: u32,
    /// Home node per partition, indexed by partition id.
    pub server_nodes: Vec<u16>,
    pub seed: u64,
    pub reservoir_capacity: usize,
}

impl ClientConfig {
    pub fn basic(node: u16, server_nodes: Vec<u16>, offered_rps: f64, seed: u64) -> ClientConfig {
        ClientConfig {
            node,
            l4port: 50_000 + node,
            client_id: node as u8,
            offered_rps,
            hash_width_bits: 0,
            server_nodes,
            seed,
            reservoir_capacity: 65_536,
        }
    }
}

struct Pending {
    key: Arc<[u8]>,
    key_id: u32,
    op: OpKind,
    sent_ns: u64,
    correction_sent: bool,
}

// --- latency recording ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    CachedRead,
    ServerRead,
    CachedWrite,
    ServerWrite,
}

impl LatencyClass {
    pub fn of(op: OpKind, cached: bool) -> LatencyClass {
        match (op, cached) {
            (OpKind::Read, true) => LatencyClass::CachedRead,
            (OpKind::Read, false) => LatencyClass::ServerRead,
            (OpKind::Write, true) => LatencyClass::CachedWrite,
            (OpKind::Write, false) => LatencyClass::ServerWrite,
        }
    }

    pub const ALL: [LatencyClass; 4] = [
        LatencyClass::CachedRead,
        LatencyClass::ServerRead,
        LatencyClass::CachedWrite,
        LatencyClass::ServerWrite,
    ];
}

/// Uniform reservoir of latency samples (microseconds). Quantiles are exact
/// while the sample count fits the capacity, unbiased estimates beyond it.
pub struct Reservoir {
    cap: usize,
    seen: u64,
    samples: Vec<u64>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    pub fn new(cap: usize, seed: u64) -> Reservoir {
        assert!(cap > 0);
        Reservoir { cap, seen: 0, samples: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn record(&mut self, value_us: u64) {
        self.seen += 1;
        if self.samples.len() < self.cap {
            self.samples.push(value_us);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.cap {
                self.samples[j as usize] = value_us;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.seen
    }

    /// Nearest-rank quantile; None when empty.
    pub fn quantile(&self, q: f64) -> Option<u64> {
        if self.samples.is_empty() {
            return None;
        }
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        Some(sorted[rank - 1])
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64)
        }
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    /// Forget everything recorded so far (warmup cutoff).
    pub fn clear(&mut self) {
        self.samples.clear();
        self.seen = 0;
    }
}

// --- the client -------------------------------------------------------------

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct ClientStats {
    pub sent: u64,
    pub completed: u64,
    pub corrections: u64,
    pub spurious: u64,
    pub not_found: u64,
    /// Completions whose value bytes belong to a different key. Must stay
    /// zero; audited, not asserted, so fault-injection runs still finish.
    pub ownership_violations: u64,
}

#[derive(Debug)]
pub enum ReplyOutcome {
    Completed {
        key_id: u32,
        op: OpKind,
        latency_ns: u64,
        cached: bool,
        tag: Option<ValueTag>,
    },
    /// Returned key did not match; a correction request was produced and
    /// the original request stays outstanding.
    CorrectionIssued(Message),
    /// Repeated mismatch on an already-corrected request; nothing to send.
    MismatchIgnored,
    Spurious,
}

pub struct Client {
    cfg: ClientConfig,
    interarrival: Exp<f64>,
    arrival_rng: ChaCha8Rng,
    pending: HashMap<u32, Pending>,
    next_seq: u32,
    versions: HashMap<u32, u32>,
    pub stats: ClientStats,
    reservoirs: HashMap<LatencyClass, Reservoir>,
}

impl Client {
    pub fn new(cfg: ClientConfig) -> Client {
        assert!(cfg.offered_rps > 0.0);
        assert!(!cfg.server_nodes.is_empty());
        let interarrival = Exp::new(cfg.offered_rps / 1e9).expect("positive rate");
        let mut reservoirs = HashMap::new();
        for (i, class) in LatencyClass::ALL.into_iter().enumerate() {
            reservoirs.insert(class, Reservoir::new(cfg.reservoir_capacity, cfg.seed ^ i as u64));
        }
        Client {
            interarrival,
            arrival_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pending: HashMap::new(),
            next_seq: 0,
            versions: HashMap::new(),
            stats: ClientStats::default(),
            reservoirs,
            cfg,
        }
    }

    pub fn node(&self) -> u16 {
        self.cfg.node
    }

    /// Open-loop gap to the next request, exponentially distributed with
    /// mean 1/offered_rate.
    pub fn next_interarrival_ns(&mut self) -> u64 {
        (self.interarrival.sample(&mut self.arrival_rng).round() as u64).max(1)
    }

    fn home(&self, hkey: u128) -> Endpoint {
        let p = partition(hkey, self.cfg.server_nodes.len());
        Endpoint::new(self.cfg.server_nodes[p], ORBIT_PORT)
    }

    /// Build and register the next request. The caller delivers it and
    /// schedules the next arrival.
    pub fn generate(&mut self, now_ns: u64, spec: &RequestSpec) -> Message {
        assert!(
            self.pending.len() < (1usize << 31),
            "outstanding window too large for 32-bit sequence space"
        );
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let hkey = hash_key_truncated(&spec.key, self.cfg.hash_width_bits);
        let (op, value): (OpCode, Arc<[u8]>) = match spec.op {
            OpKind::Read => (OpCode::ReadRequest, Arc::from(&[][..])),
            OpKind::Write => {
                let v = self.versions.entry(spec.key_id).or_insert(0);
                *v += 1;
                (
                    OpCode::WriteRequest,
                    crate::workload::make_value(
                        &spec.key,
                        *v,
                        self.cfg.client_id,
                        spec.value_size as usize,
                    ),
                )
            }
        };
        let mut msg = Message::new(op, seq, hkey, spec.key.clone(), value);
        msg.src = Endpoint::new(self.cfg.node, self.cfg.l4port);
        msg.dst = self.home(hkey);
        self.pending.insert(
            seq,
            Pending {
                key: spec.key.clone(),
                key_id: spec.key_id,
                op: spec.op,
                sent_ns: now_ns,
                correction_sent: false,
            },
        );
        self.stats.sent += 1;
        msg
    }

    /// Handle a read or write reply. A returned key differing from the
    /// requested one is a hash-collision artifact: the request stays
    /// outstanding and a correction request is sent to the home server.
    pub fn on_reply(&mut self, msg: &Message, now_ns: u64) -> ReplyOutcome {
        debug_assert!(matches!(msg.op, OpCode::ReadReply | OpCode::WriteReply));
        let Some(p) = self.pending.get_mut(&msg.seq) else {
            self.stats.spurious += 1;
            return ReplyOutcome::Spurious;
        };
        if p.key != msg.key {
            if p.correction_sent {
                return ReplyOutcome::MismatchIgnored;
            }
            p.correction_sent = true;
            self.stats.corrections += 1;
            let hkey = hash_key_truncated(&p.key, self.cfg.hash_width_bits);
            let mut crn = Message::new(
                OpCode::CorrectionRequest,
                msg.seq,
                hkey,
                p.key.clone(),
                Arc::from(&[][..]),
            );
            crn.src = Endpoint::new(self.cfg.node, self.cfg.l4port);
            crn.dst = self.home(hkey);
            return ReplyOutcome::CorrectionIssued(crn);
        }
        let p = self.pending.remove(&msg.seq).unwrap();
        let latency_ns = now_ns.saturating_sub(p.sent_ns);
        let cached = msg.meta.cached == 1;
        let tag = parse_value(&msg.value);
        if msg.value.is_empty() {
            if msg.flag == crate::server::NOT_FOUND_FLAG {
                self.stats.not_found += 1;
            }
        } else if !value_owned_by(&p.key, &msg.value) {
            self.stats.ownership_violations += 1;
        }
        self.stats.completed += 1;
        let class = LatencyClass::of(p.op, cached);
        self.reservoirs.get_mut(&class).unwrap().record(latency_ns / 1_000);
        ReplyOutcome::Completed { key_id: p.key_id, op: p.op, latency_ns, cached, tag }
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    pub fn reservoir(&self, class: LatencyClass) -> &Reservoir {
        &self.reservoirs[&class]
    }

    /// Drop latency samples accumulated during warmup; counters keep going.
    pub fn clear_latency(&mut self) {
        for r in self.reservoirs.values_mut() {
            r.clear();
        }
    }

    /// Serializable per-class summary.
    pub fn metrics(&self) -> ClientMetrics {
        let mut classes = Vec::new();
        for class in LatencyClass::ALL {
            let r = &self.reservoirs[&class];
            if r.count() > 0 {
                classes.push(ClassMetrics {
                    class,
                    count: r.count(),
                    median_us: r.quantile(0.5).unwrap(),
                    p99_us: r.quantile(0.99).unwrap(),
                });
            }
        }
        ClientMetrics {
            node: self.cfg.node,
            stats: self.stats.clone(),
            outstanding: self.pending.len() as u64,
            classes,
        }
    }

    #[cfg(test)]
    fn set_next_seq(&mut self, seq: u32) {
        self.next_seq = seq;
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassMetrics {
    pub class: LatencyClass,
    pub count: u64,
    pub median_us: u64,
    pub p99_us: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClientMetrics {
    pub node: u16,
    #[serde(flatten)]
    pub stats: ClientStats,
    pub outstanding: u64,
    pub classes: Vec<ClassMetrics>,
}
