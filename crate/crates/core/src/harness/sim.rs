//! Topology wiring and the event loop: clients, one switch (three cache
//! planes), storage servers, metric windows, and the audits that run when
//! the clock stops.
//!
//! Node numbering: clients at 0.., the switch at 100, servers at 200..
//! Every data packet crosses the switch; replies leave servers at their
//! service-completion time. Switch egress adds the pipeline delay for
//! packets that entered from outside; packets coming off the recirculation
//! port already paid the pipeline as part of their loop service time.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::baseline::{
    BaselineAction, NetCacheConfig, NetCacheController, NetCacheSwitch, NoCacheSwitch,
};
use crate::client::{Client, ClientConfig, ReplyOutcome};
use crate::coherence::HistoryEvent;
use crate::controller::{Controller, ControllerConfig};
use crate::harness::config::{ExperimentConfig, Scheme};
use crate::messages::{hash_key, hash_key_truncated, partition, Message, OpCode};
use crate::server::StorageServer;
use crate::simnet::{
    ControlMsg, Event, EventKind, LinkId, NetCtx, RecircPort, SimTime, World, WORLD,
};
use crate::switchd::{
    CachePacket, FaultInjection, Ingress, OrbitSwitch, SwitchAction, SwitchConfig,
};
use crate::workload::{parse_value, OpKind, WorkloadGen};

pub const SWITCH_NODE: u16 = 100;
pub const SERVER_NODE_BASE: u16 = 200;

// Timer tokens: kind in the top byte, payload below.
const T_KIND_SHIFT: u32 = 56;
const T_ARRIVAL: u64 = 1 << T_KIND_SHIFT;
const T_SERVER_DEPART: u64 = 2 << T_KIND_SHIFT;
const T_SERVER_TOPK: u64 = 3 << T_KIND_SHIFT;
const T_CTRL_PERIOD: u64 = 4 << T_KIND_SHIFT;
const T_FETCH_TIMEOUT: u64 = 5 << T_KIND_SHIFT;
const T_RECIRC_DONE: u64 = 6 << T_KIND_SHIFT;
const T_WINDOW: u64 = 7 << T_KIND_SHIFT;
const T_HOTIN: u64 = 8 << T_KIND_SHIFT;
const T_SERVER_APPLY: u64 = 9 << T_KIND_SHIFT;
const T_WARMUP: u64 = 10 << T_KIND_SHIFT;
const T_PAYLOAD_MASK: u64 = (1 << T_KIND_SHIFT) - 1;

// Inverse of the workload's key synthesis (digits least-significant first).
fn key_id_of(key: &[u8]) -> u32 {
    let digits: String = key.iter().rev().map(|&b| b as char).collect();
    digits
        .trim_start_matches('0')
        .parse()
        .ok()
        .or(Some(0))
        .expect("workload keys are fixed-width decimal")
}

struct ClientSlot {
    client: Client,
    gen: WorkloadGen,
    up: LinkId,
}

struct ServerSlot {
    server: StorageServer,
    up: LinkId,
    /// Replies waiting for their departure timers; departure times are
    /// monotone per server, so FIFO order matches timer order.
    replies: VecDeque<Message>,
    served: u64,
}

enum Plane {
    Orbit { sw: OrbitSwitch, ctl: Controller, port: RecircPort<CachePacket> },
    Net { sw: NetCacheSwitch, ctl: NetCacheController },
    Plain { sw: NoCacheSwitch },
}

/// One metric window's deltas plus instantaneous gauges at its end.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowRecord {
    pub t_s: f64,
    pub sent: u64,
    pub completed: u64,
    pub cached_served: u64,
    pub corrections: u64,
    pub cache_hits: u64,
    pub overflow: u64,
    pub per_server_served: Vec<u64>,
    pub recirc_occupancy: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CountSnap {
    pub t_ns: u64,
    pub sent: u64,
    pub completed: u64,
    pub cached: u64,
    pub corrections: u64,
    pub cache_hits: u64,
    pub overflow: u64,
    pub per_server_served: Vec<u64>,
}

pub struct Sim {
    pub cfg: ExperimentConfig,
    clients: Vec<ClientSlot>,
    servers: Vec<ServerSlot>,
    plane: Plane,
    to_clients: Vec<LinkId>,
    to_servers: Vec<LinkId>,
    pipeline_ns: u64,
    control_delay_ns: u64,
    period_ns: u64,
    topk_k: usize,
    horizon: SimTime,
    window_ns: u64,
    apply_lag_ns: u64,
    record_history: bool,
    pub history: Vec<HistoryEvent>,
    cached_completions: u64,
    pub windows: Vec<WindowRecord>,
    win_prev: CountSnap,
    pub(crate) measure_base: Option<CountSnap>,
    pub preload_keys: Vec<Arc<[u8]>>,
    structural_failures: Vec<String>,
    // Revisit probe: tracks the gap between consecutive recirculation-port
    // completions of the hottest preloaded key's cache packet, after warmup.
    revisit_hkey: u128,
    revisit_last_ns: Option<u64>,
    revisit_sum_ns: u64,
    revisit_count: u64,
}

impl Sim {
    /// Wire the topology, preload stores and caches, and arm the initial
    /// timers. The returned context is ready for [`crate::simnet::run`].
    pub fn build(cfg: ExperimentConfig) -> (Sim, NetCtx) {
        cfg.validate().expect("validated config");
        let wl_cfg = cfg.workload_config().expect("size model loads");
        let bw = cfg.bw_bps();
        let prop = cfg.sim.link_prop_ns;
        let n_clients = cfg.clients.count;
        let n_servers = cfg.servers.count;
        assert!(n_clients < SWITCH_NODE as usize);

        let mut ctx = NetCtx::new(cfg.seed ^ 0x1055_5EED);
        let server_nodes: Vec<u16> =
            (0..n_servers).map(|j| SERVER_NODE_BASE + j as u16).collect();

        let mut clients = Vec::with_capacity(n_clients);
        let mut to_clients = Vec::with_capacity(n_clients);
        let per_client_rps = cfg.clients.offered_rps / n_clients as f64;
        for i in 0..n_clients as u16 {
            let up = ctx.add_link(SWITCH_NODE, prop, bw, 0.0);
            to_clients.push(ctx.add_link(i, prop, bw, 0.0));
            let ccfg = ClientConfig {
                node: i,
                l4port: 50_000 + i,
                client_id: i as u8,
                offered_rps: per_client_rps,
                hash_width_bits: cfg.clients.hash_width_bits,
                server_nodes: server_nodes.clone(),
                seed: cfg.seed.wrapping_add(0xC11E).wrapping_mul(0x9E37_79B9).wrapping_add(i as u64),
                reservoir_capacity: 65_536,
            };
            let gen = WorkloadGen::with_stream_seed(
                wl_cfg.clone(),
                cfg.seed.wrapping_add(0x57AE).wrapping_add(i as u64 * 0x1_0001),
            );
            clients.push(ClientSlot { client: Client::new(ccfg), gen, up });
        }

        let mut servers = Vec::with_capacity(n_servers);
        let mut to_servers = Vec::with_capacity(n_servers);
        for j in 0..n_servers {
            let node = server_nodes[j];
            to_servers.push(ctx.add_link(node, prop, bw, cfg.sim.server_link_loss));
            let up = ctx.add_link(SWITCH_NODE, prop, bw, 0.0);
            let mut server = StorageServer::new(
                j as u8,
                node,
                n_servers as u16,
                cfg.servers.rate_rps,
                cfg.servers.cms_width,
            );
            server.faults.premature_apply_lag_ns =
                cfg.faults.premature_write_apply_lag_us * 1_000;
            servers.push(ServerSlot { server, up, replies: VecDeque::new(), served: 0 });
        }

        // Every key's version-0 value sits in its home partition before any
        // traffic flows. Placement follows the same (possibly truncated)
        // hash the clients route by.
        let layout = WorkloadGen::with_stream_seed(wl_cfg.clone(), cfg.seed);
        let width = cfg.clients.hash_width_bits;
        for (key, value) in layout.initial_items() {
            let hkey = hash_key_truncated(&key, width);
            let home = partition(hkey, n_servers);
            servers[home].server.preload(key, value);
        }

        let period_ns = (cfg.cache.period_s * 1e9).round() as u64;
        let topk_k;
        let mut preload_keys = Vec::new();
        let plane = match cfg.scheme {
            Scheme::Orbitcache => {
                let sw_cfg = SwitchConfig {
                    capacity: if cfg.cache.auto_size {
                        cfg.cache.max_size
                    } else {
                        cfg.cache.size.max(cfg.cache.min_size)
                    },
                    queue_slots: cfg.cache.queue_slots,
                    multi_packet: cfg.cache.multi_packet,
                    flush_on_evict: cfg.cache.flush_on_evict,
                    faults: FaultInjection {
                        skip_invalidate_on_write: cfg.faults.skip_invalidate_on_write,
                        skip_drop_invalid_cache_packet: cfg.faults.skip_drop_invalid,
                    },
                };
                let mut sw = OrbitSwitch::new(sw_cfg);
                let ccfg = ControllerConfig {
                    period_s: cfg.cache.period_s,
                    topk: cfg.cache.size * 2,
                    fetch_timeout_ns: (cfg.cache.fetch_timeout_ms * 1e6).round() as u64,
                    fetch_retries: cfg.cache.fetch_retries,
                    threshold: cfg.cache.overflow_threshold,
                    min_size: cfg.cache.min_size,
                    max_size: cfg.cache.max_size,
                    resize_enabled: cfg.cache.auto_size,
                    initial_target: cfg.cache.size,
                    hash_width_bits: width,
                    server_nodes: server_nodes.clone(),
                    switch_node: SWITCH_NODE,
                };
                topk_k = ccfg.topk;
                let mut ctl = Controller::new(ccfg);
                let port = RecircPort::new(cfg.sim.pipeline_ns, bw);
                if cfg.cache.preload {
                    preload_keys = layout
                        .hottest_key_ids(ctl.sizing.target_size)
                        .into_iter()
                        .map(|id| layout.key(id).clone())
                        .collect();
                    // Fetches go on the wire at t=0; timers armed alongside.
                    for cmd in ctl.preload(&preload_keys, &mut sw) {
                        let home = cmd.msg.dst.node;
                        let link = to_servers[(home - SERVER_NODE_BASE) as usize];
                        ctx.send(link, cmd.msg);
                        ctx.schedule(
                            SimTime(cmd.timeout_ns),
                            SWITCH_NODE,
                            EventKind::Timer(T_FETCH_TIMEOUT | cmd.token),
                        );
                    }
                }
                Plane::Orbit { sw, ctl, port }
            }
            Scheme::Netcache => {
                let nc_cfg = NetCacheConfig {
                    capacity: cfg.netcache.capacity,
                    key_limit: cfg.netcache.key_limit,
                    value_limit: cfg.netcache.value_limit,
                };
                let mut sw = NetCacheSwitch::new(nc_cfg);
                let mut ctl =
                    NetCacheController::new(SWITCH_NODE, server_nodes.clone(), cfg.netcache.capacity);
                topk_k = ctl.topk;
                if cfg.netcache.preload {
                    preload_keys = layout
                        .hottest_key_ids(cfg.netcache.capacity)
                        .into_iter()
                        .map(|id| layout.key(id).clone())
                        .collect();
                    for cmd in ctl.preload(&preload_keys, &mut sw) {
                        let home = cmd.msg.dst.node;
                        let link = to_servers[(home - SERVER_NODE_BASE) as usize];
                        ctx.send(link, cmd.msg);
                        ctx.schedule(
                            SimTime(cmd.timeout_ns),
                            SWITCH_NODE,
                            EventKind::Timer(T_FETCH_TIMEOUT | cmd.token),
                        );
                    }
                }
                Plane::Net { sw, ctl }
            }
            Scheme::Nocache => {
                topk_k = 0;
                Plane::Plain { sw: NoCacheSwitch::default() }
            }
        };

        let horizon = SimTime::from_secs(cfg.sim.duration_s);
        let window_ns = (cfg.sim.window_s * 1e9).round() as u64;
        let settle_ns = (cfg.sim.settle_s * 1e9).round() as u64;

        let mut sim = Sim {
            pipeline_ns: cfg.sim.pipeline_ns,
            control_delay_ns: cfg.sim.control_delay_ns,
            period_ns,
            topk_k,
            horizon,
            window_ns,
            apply_lag_ns: cfg.faults.premature_write_apply_lag_us * 1_000,
            record_history: cfg.sim.record_history,
            history: Vec::new(),
            cached_completions: 0,
            windows: Vec::new(),
            win_prev: CountSnap::default(),
            measure_base: None,
            revisit_hkey: preload_keys.first().map_or(0, |k| hash_key(k)),
            revisit_last_ns: None,
            revisit_sum_ns: 0,
            revisit_count: 0,
            preload_keys,
            structural_failures: Vec::new(),
            clients,
            servers,
            plane,
            to_clients,
            to_servers,
            cfg,
        };
        sim.win_prev = sim.snapshot(0);

        // Client arrivals begin after the settle delay.
        for i in 0..sim.clients.len() {
            let gap = sim.clients[i].client.next_interarrival_ns();
            ctx.schedule(
                SimTime(settle_ns + gap),
                i as u16,
                EventKind::Timer(T_ARRIVAL),
            );
        }
        // Periodic machinery.
        if !matches!(sim.plane, Plane::Plain { .. }) {
            ctx.schedule(SimTime(sim.period_ns), SWITCH_NODE, EventKind::Timer(T_CTRL_PERIOD));
            let lead = (sim.period_ns / 2).min(1_000_000);
            for j in 0..sim.servers.len() {
                ctx.schedule(
                    SimTime(sim.period_ns - lead),
                    SERVER_NODE_BASE + j as u16,
                    EventKind::Timer(T_SERVER_TOPK),
                );
            }
        }
        ctx.schedule(SimTime(sim.window_ns), WORLD, EventKind::Timer(T_WINDOW));
        let warmup_ns = (sim.cfg.sim.warmup_s * 1e9).round() as u64;
        ctx.schedule(SimTime(warmup_ns), WORLD, EventKind::Timer(T_WARMUP));
        if let crate::workload::DynamicPattern::HotIn { period_s, .. } =
            sim.clients[0].gen.pattern()
        {
            let p = (period_s * 1e9).round() as u64;
            ctx.schedule(SimTime(p), WORLD, EventKind::Timer(T_HOTIN));
        }
        (sim, ctx)
    }

    pub(crate) fn end_snapshot(&self, t_ns: u64) -> CountSnap {
        self.snapshot(t_ns)
    }

    fn snapshot(&self, t_ns: u64) -> CountSnap {
        let (hits, overflow) = match &self.plane {
            Plane::Orbit { sw, .. } => (sw.totals.cache_hits, sw.totals.overflow_forwards),
            Plane::Net { sw, .. } => (sw.totals.cache_hits, 0),
            Plane::Plain { .. } => (0, 0),
        };
        CountSnap {
            t_ns,
            sent: self.clients.iter().map(|c| c.client.stats.sent).sum(),
            completed: self.clients.iter().map(|c| c.client.stats.completed).sum(),
            cached: self.cached_completions,
            corrections: self.clients.iter().map(|c| c.client.stats.corrections).sum(),
            cache_hits: hits,
            overflow,
            per_server_served: self.servers.iter().map(|s| s.served).collect(),
        }
    }

    pub fn recirc_occupancy(&self) -> usize {
        match &self.plane {
            Plane::Orbit { port, .. } => port.occupancy(),
            _ => 0,
        }
    }

    /// Mean measured gap between recirculation passes of the hottest
    /// preloaded key's cache packet (post-warmup), if any were observed.
    pub fn revisit_mean_ns(&self) -> Option<f64> {
        (self.revisit_count > 0)
            .then(|| self.revisit_sum_ns as f64 / self.revisit_count as f64)
    }

    fn node_link(&self, node: u16) -> LinkId {
        if node >= SERVER_NODE_BASE {
            self.to_servers[(node - SERVER_NODE_BASE) as usize]
        } else {
            self.to_clients[node as usize]
        }
    }

    /// Egress from the switch toward `msg.dst`. Fetch replies addressed to
    /// the switch itself go to the control plane instead of a wire.
    fn switch_egress(&mut self, msg: Message, extra_ns: u64, ctx: &mut NetCtx) {
        if msg.dst.node == SWITCH_NODE {
            match &mut self.plane {
                Plane::Orbit { sw, ctl, .. } => ctl.on_fetch_reply(&msg, sw),
                Plane::Net { sw, ctl } => ctl.on_fetch_reply(&msg, sw),
                Plane::Plain { .. } => {
                    self.structural_failures
                        .push(format!("switch-addressed packet in plain plane: {:?}", msg.op));
                }
            }
            return;
        }
        let link = self.node_link(msg.dst.node);
        ctx.send_after(link, extra_ns, msg);
    }

    fn enqueue_recirc(&mut self, pkt: CachePacket, ctx: &mut NetCtx) {
        assert_eq!(
            pkt.msg.op,
            OpCode::ReadReply,
            "only reply-shaped cache packets may circulate"
        );
        let Plane::Orbit { port, .. } = &mut self.plane else {
            unreachable!("recirculation without the orbit plane");
        };
        let wire = pkt.msg.wire_size();
        if let Some(d) = port.enqueue(pkt, wire) {
            ctx.schedule(ctx.now.plus(d), SWITCH_NODE, EventKind::Timer(T_RECIRC_DONE));
        }
    }

    fn apply_switch_actions(
        &mut self,
        actions: Vec<SwitchAction>,
        from_external: bool,
        ctx: &mut NetCtx,
    ) {
        let extra = if from_external { self.pipeline_ns } else { 0 };
        for action in actions {
            match action {
                SwitchAction::Forward { port: _, msg } => self.switch_egress(msg, extra, ctx),
                SwitchAction::Drop { .. } => {}
                SwitchAction::Recirculate { pkt } => self.enqueue_recirc(pkt, ctx),
                SwitchAction::CloneMulticast { to_client, to_recirc } => {
                    self.switch_egress(to_client, extra, ctx);
                    self.enqueue_recirc(to_recirc, ctx);
                }
            }
        }
    }

    fn send_fetch(&mut self, msg: Message, token: u64, timeout_ns: u64, ctx: &mut NetCtx) {
        let link = self.node_link(msg.dst.node);
        ctx.send(link, msg);
        ctx.schedule(
            ctx.now.plus(timeout_ns),
            SWITCH_NODE,
            EventKind::Timer(T_FETCH_TIMEOUT | token),
        );
    }

    fn handle_switch(&mut self, kind: EventKind, ctx: &mut NetCtx) {
        match kind {
            EventKind::Deliver(msg) => match &mut self.plane {
                Plane::Orbit { sw, .. } => {
                    let mut actions = Vec::new();
                    sw.process(msg, Ingress::External, ctx.now.ns(), &mut actions);
                    self.apply_switch_actions(actions, true, ctx);
                }
                Plane::Net { sw, .. } => {
                    let action = sw.process(msg, ctx.now.ns());
                    match action {
                        BaselineAction::Forward { port: _, msg } => {
                            self.switch_egress(msg, self.pipeline_ns, ctx)
                        }
                        BaselineAction::Reply(rep) => {
                            self.switch_egress(rep, self.pipeline_ns, ctx)
                        }
                    }
                }
                Plane::Plain { sw } => {
                    let BaselineAction::Forward { port: _, msg } = sw.process(msg) else {
                        unreachable!("plain switch only forwards");
                    };
                    self.switch_egress(msg, self.pipeline_ns, ctx);
                }
            },
            EventKind::Control(ControlMsg::TopkReport { server, period: _, entries }) => {
                match &mut self.plane {
                    Plane::Orbit { ctl, .. } => ctl.on_report(server as u8, entries),
                    Plane::Net { ctl, .. } => ctl.on_report(entries),
                    Plane::Plain { .. } => {}
                }
            }
            EventKind::Timer(tok) => {
                let payload = tok & T_PAYLOAD_MASK;
                match tok & !T_PAYLOAD_MASK {
                    T_CTRL_PERIOD => {
                        let fetches: Vec<(Message, u64, u64)> = match &mut self.plane {
                            Plane::Orbit { sw, ctl, .. } => ctl
                                .on_period(sw)
                                .into_iter()
                                .map(|c| (c.msg, c.token, c.timeout_ns))
                                .collect(),
                            Plane::Net { sw, ctl } => ctl
                                .on_period(sw)
                                .into_iter()
                                .map(|c| (c.msg, c.token, c.timeout_ns))
                                .collect(),
                            Plane::Plain { .. } => Vec::new(),
                        };
                        for (msg, token, timeout) in fetches {
                            self.send_fetch(msg, token, timeout, ctx);
                        }
                        let next = ctx.now.plus(self.period_ns);
                        if next <= self.horizon {
                            ctx.schedule(next, SWITCH_NODE, EventKind::Timer(T_CTRL_PERIOD));
                        }
                    }
                    T_FETCH_TIMEOUT => {
                        let retry: Option<(Message, u64, u64)> = match &mut self.plane {
                            Plane::Orbit { sw, ctl, .. } => ctl
                                .on_fetch_timer(payload, sw)
                                .map(|c| (c.msg, c.token, c.timeout_ns)),
                            Plane::Net { sw, ctl } => ctl
                                .on_fetch_timer(payload, sw)
                                .map(|c| (c.msg, c.token, c.timeout_ns)),
                            Plane::Plain { .. } => None,
                        };
                        if let Some((msg, token, timeout)) = retry {
                            self.send_fetch(msg, token, timeout, ctx);
                        }
                    }
                    T_RECIRC_DONE => {
                        let (pkt, next) = {
                            let Plane::Orbit { port, .. } = &mut self.plane else {
                                unreachable!("recirc completion without the orbit plane");
                            };
                            port.complete()
                        };
                        if let Some(d) = next {
                            ctx.schedule(
                                ctx.now.plus(d),
                                SWITCH_NODE,
                                EventKind::Timer(T_RECIRC_DONE),
                            );
                        }
                        if pkt.msg.hkey == self.revisit_hkey && self.measure_base.is_some() {
                            let now = ctx.now.ns();
                            if let Some(prev) = self.revisit_last_ns {
                                self.revisit_sum_ns += now - prev;
                                self.revisit_count += 1;
                            }
                            self.revisit_last_ns = Some(now);
                        }
                        let mut actions = Vec::new();
                        let Plane::Orbit { sw, .. } = &mut self.plane else {
                            unreachable!("recirc completion without the orbit plane");
                        };
                        sw.process(
                            pkt.msg,
                            Ingress::Recirc { epoch: pkt.epoch },
                            ctx.now.ns(),
                            &mut actions,
                        );
                        self.apply_switch_actions(actions, false, ctx);
                    }
                    other => panic!("switch got unknown timer kind {other:#x}"),
                }
            }
        }
    }

    fn handle_client(&mut self, i: usize, kind: EventKind, ctx: &mut NetCtx) {
        match kind {
            EventKind::Deliver(msg) => {
                let slot = &mut self.clients[i];
                match slot.client.on_reply(&msg, ctx.now.ns()) {
                    ReplyOutcome::Completed { key_id, op, latency_ns, cached, tag } => {
                        if cached {
                            self.cached_completions += 1;
                        }
                        if self.record_history && op == OpKind::Read {
                            if let Some(tag) = tag {
                                self.history.push(HistoryEvent::ReadServed {
                                    key_id,
                                    version: tag.version,
                                    writer: tag.writer,
                                    send_ns: ctx.now.ns().saturating_sub(latency_ns),
                                    recv_ns: ctx.now.ns(),
                                    by: if cached {
                                        crate::coherence::ServedBy::Switch
                                    } else {
                                        crate::coherence::ServedBy::Server
                                    },
                                });
                            }
                        }
                    }
                    ReplyOutcome::CorrectionIssued(crn) => {
                        let up = slot.up;
                        ctx.send(up, crn);
                    }
                    ReplyOutcome::MismatchIgnored | ReplyOutcome::Spurious => {}
                }
            }
            EventKind::Timer(tok) if tok & !T_PAYLOAD_MASK == T_ARRIVAL => {
                let slot = &mut self.clients[i];
                let spec = slot.gen.sample();
                let msg = slot.client.generate(ctx.now.ns(), &spec);
                let up = slot.up;
                ctx.send(up, msg);
                let gap = slot.client.next_interarrival_ns();
                let next = ctx.now.plus(gap);
                if next <= self.horizon {
                    ctx.schedule(next, i as u16, EventKind::Timer(T_ARRIVAL));
                }
            }
            other => panic!("client got unexpected event {other:?}"),
        }
    }

    fn handle_server(&mut self, j: usize, kind: EventKind, ctx: &mut NetCtx) {
        match kind {
            EventKind::Deliver(msg) => {
                let now = ctx.now.ns();
                if self.record_history
                    && msg.op == OpCode::WriteRequest
                    && self.apply_lag_ns == 0
                {
                    if let Some(tag) = parse_value(&msg.value) {
                        self.history.push(HistoryEvent::WriteApplied {
                            key_id: key_id_of(&msg.key),
                            version: tag.version,
                            writer: tag.writer,
                            at_ns: now,
                        });
                    }
                }
                let is_write = msg.op == OpCode::WriteRequest;
                let slot = &mut self.servers[j];
                let (departure, reply) = slot.server.handle_request(&msg, now);
                slot.replies.push_back(reply);
                let node = SERVER_NODE_BASE + j as u16;
                ctx.schedule(SimTime(departure), node, EventKind::Timer(T_SERVER_DEPART));
                if is_write && self.apply_lag_ns > 0 {
                    ctx.schedule(
                        SimTime(departure + self.apply_lag_ns),
                        node,
                        EventKind::Timer(T_SERVER_APPLY),
                    );
                }
            }
            EventKind::Timer(tok) => match tok & !T_PAYLOAD_MASK {
                T_SERVER_DEPART => {
                    let slot = &mut self.servers[j];
                    let reply = slot.replies.pop_front().expect("departure matches a reply");
                    slot.served += 1;
                    let up = slot.up;
                    ctx.send(up, reply);
                }
                T_SERVER_TOPK => {
                    let slot = &mut self.servers[j];
                    let (period, entries) = slot.server.report_topk(self.topk_k);
                    ctx.send_control(
                        SWITCH_NODE,
                        self.control_delay_ns,
                        ControlMsg::TopkReport { server: j as u16, period, entries },
                    );
                    let next = ctx.now.plus(self.period_ns);
                    if next <= self.horizon {
                        ctx.schedule(
                            next,
                            SERVER_NODE_BASE + j as u16,
                            EventKind::Timer(T_SERVER_TOPK),
                        );
                    }
                }
                T_SERVER_APPLY => {
                    let slot = &mut self.servers[j];
                    let (key, value) =
                        slot.server.apply_next_held_write().expect("held write per timer");
                    if self.record_history {
                        if let Some(tag) = parse_value(&value) {
                            self.history.push(HistoryEvent::WriteApplied {
                                key_id: key_id_of(&key),
                                version: tag.version,
                                writer: tag.writer,
                                at_ns: ctx.now.ns(),
                            });
                        }
                    }
                }
                other => panic!("server got unknown timer kind {other:#x}"),
            },
            other => panic!("server got unexpected event {other:?}"),
        }
    }

    fn handle_world(&mut self, tok: u64, ctx: &mut NetCtx) {
        match tok & !T_PAYLOAD_MASK {
            T_WINDOW => {
                let snap = self.snapshot(ctx.now.ns());
                let prev = std::mem::replace(&mut self.win_prev, snap.clone());
                let per_server: Vec<u64> = snap
                    .per_server_served
                    .iter()
                    .zip(&prev.per_server_served)
                    .map(|(a, b)| a - b)
                    .collect();
                self.windows.push(WindowRecord {
                    t_s: ctx.now.secs(),
                    sent: snap.sent - prev.sent,
                    completed: snap.completed - prev.completed,
                    cached_served: snap.cached - prev.cached,
                    corrections: snap.corrections - prev.corrections,
                    cache_hits: snap.cache_hits - prev.cache_hits,
                    overflow: snap.overflow - prev.overflow,
                    per_server_served: per_server,
                    recirc_occupancy: self.recirc_occupancy(),
                });
                let next = ctx.now.plus(self.window_ns);
                if next <= self.horizon {
                    ctx.schedule(next, WORLD, EventKind::Timer(T_WINDOW));
                }
            }
            T_WARMUP => {
                self.measure_base = Some(self.snapshot(ctx.now.ns()));
                for slot in &mut self.clients {
                    slot.client.clear_latency();
                }
            }
            T_HOTIN => {
                for slot in &mut self.clients {
                    slot.gen.apply_hot_in_swap();
                }
                if let crate::workload::DynamicPattern::HotIn { period_s, .. } =
                    self.clients[0].gen.pattern()
                {
                    let p = (period_s * 1e9).round() as u64;
                    let next = ctx.now.plus(p);
                    if next <= self.horizon {
                        ctx.schedule(next, WORLD, EventKind::Timer(T_HOTIN));
                    }
                }
            }
            other => panic!("world got unknown timer kind {other:#x}"),
        }
    }

    // --- end-of-run access ---------------------------------------------

    pub fn clients(&self) -> impl Iterator<Item = &Client> {
        self.clients.iter().map(|s| &s.client)
    }

    pub fn servers(&self) -> impl Iterator<Item = &StorageServer> {
        self.servers.iter().map(|s| &s.server)
    }

    pub fn per_server_served(&self) -> Vec<u64> {
        self.servers.iter().map(|s| s.served).collect()
    }

    pub fn orbit_parts(&self) -> Option<(&OrbitSwitch, &Controller)> {
        match &self.plane {
            Plane::Orbit { sw, ctl, .. } => Some((sw, ctl)),
            _ => None,
        }
    }

    pub fn netcache_parts(&self) -> Option<(&NetCacheSwitch, &NetCacheController)> {
        match &self.plane {
            Plane::Net { sw, ctl } => Some((sw, ctl)),
            _ => None,
        }
    }

    pub fn nocache_forwarded(&self) -> Option<u64> {
        match &self.plane {
            Plane::Plain { sw } => Some(sw.forwarded),
            _ => None,
        }
    }

    /// Structural invariants that must hold at the end of every run, fault
    /// injection or not. Returns human-readable failure descriptions.
    pub fn audit(&self, ctx: &NetCtx) -> Vec<String> {
        let mut failures = self.structural_failures.clone();

        for slot in &self.clients {
            let s = &slot.client.stats;
            let outstanding = slot.client.outstanding() as u64;
            if s.sent != s.completed + outstanding {
                failures.push(format!(
                    "client {} accounting: sent {} != completed {} + outstanding {}",
                    slot.client.node(),
                    s.sent,
                    s.completed,
                    outstanding
                ));
            }
        }

        let c = &ctx.counters;
        let pending = ctx.pending_delivers() as u64;
        if c.link_sent != c.link_delivered + c.link_lost + pending {
            failures.push(format!(
                "packet conservation: sent {} != delivered {} + lost {} + in-flight {}",
                c.link_sent, c.link_delivered, c.link_lost, pending
            ));
        }

        if let Plane::Orbit { sw, port, .. } = &self.plane {
            let t = &sw.totals;
            let pending_reads = sw.pending_total() as u64;
            if t.enqueued != t.dequeued + pending_reads + t.flushed_metadata {
                failures.push(format!(
                    "request-table ledger: enqueued {} != dequeued {} + pending {} + flushed {}",
                    t.enqueued, t.dequeued, pending_reads, t.flushed_metadata
                ));
            }
            if !self.cfg.cache.multi_packet {
                let drops = t.miss_drops + t.invalid_drops + t.stale_drops;
                let expect = t.validations.saturating_sub(drops);
                if port.occupancy() as u64 != expect {
                    failures.push(format!(
                        "cache-packet population: occupancy {} != validations {} - drops {}",
                        port.occupancy(),
                        t.validations,
                        drops
                    ));
                }
            }
        }

        failures
    }
}

impl World for Sim {
    fn handle(&mut self, ev: Event, ctx: &mut NetCtx) {
        match ev.target {
            WORLD => {
                let EventKind::Timer(tok) = ev.kind else {
                    panic!("world events are timers");
                };
                self.handle_world(tok, ctx);
            }
            SWITCH_NODE => self.handle_switch(ev.kind, ctx),
            n if n >= SERVER_NODE_BASE => {
                self.handle_server((n - SERVER_NODE_BASE) as usize, ev.kind, ctx)
            }
            n => self.handle_client(n as usize, ev.kind, ctx),
        }
    }
}
