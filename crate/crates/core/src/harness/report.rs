//! Run results: one serializable report per experiment, with CSV emitters
//! for the per-window timelines and sweep summaries. Everything here is
//! computed from plain vectors in a fixed order, so a seed's report is
//! byte-identical across runs.

use std::io::Write as _;
use std::path::Path;

use crate::client::LatencyClass;
use crate::coherence::{self, CheckReport};
use crate::controller::PeriodRecord;
use crate::harness::sim::{Sim, WindowRecord};
use crate::simnet::{NetCounters, NetCtx};
use crate::switchd::SwitchTotals;

#[derive(Debug, Clone, serde::Serialize)]
pub struct LatencySummary {
    pub class: LatencyClass,
    pub count: u64,
    pub median_us: u64,
    pub p99_us: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct NetcacheSummary {
    pub stored: usize,
    pub entries: usize,
    pub rejected: usize,
    pub rollbacks: u64,
    pub oversize_rejects: u64,
    pub cache_hits: u64,
    pub served: u64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ServerAggregate {
    pub reads: u64,
    pub writes: u64,
    pub fetches: u64,
    pub corrections: u64,
    pub not_found: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoherenceSummary {
    pub reads_checked: u64,
    pub writes_indexed: u64,
    pub violations: u64,
    /// First violation, for log readability; the full list stays in memory.
    pub first: Option<String>,
}

impl CoherenceSummary {
    pub fn from_report(r: &CheckReport) -> CoherenceSummary {
        CoherenceSummary {
            reads_checked: r.reads_checked,
            writes_indexed: r.writes_indexed,
            violations: r.violations.len() as u64,
            first: r.violations.first().map(|v| format!("{v:?}")),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub scheme: String,
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub measured_s: f64,
    pub offered_rps: f64,
    pub sent: u64,
    pub completed: u64,
    pub completion_ratio: f64,
    pub throughput_rps: f64,
    pub cached_served: u64,
    pub cached_fraction: f64,
    pub corrections: u64,
    pub spurious: u64,
    pub not_found: u64,
    pub ownership_violations: u64,
    pub per_server_rps: Vec<f64>,
    /// min/max of per-server served rates; 1.0 when idle.
    pub balancing_efficiency: f64,
    pub latency: Vec<LatencySummary>,
    pub cache_hits: u64,
    pub overflow: u64,
    pub overflow_ratio_hits: f64,
    pub overflow_ratio_all: f64,
    pub recirc_occupancy_end: usize,
    /// Mean measured revisit period of the hottest cached packet, ns.
    pub revisit_measured_ns: Option<f64>,
    pub windows: Vec<WindowRecord>,
    pub controller_periods: Vec<PeriodRecord>,
    pub switch_totals: Option<SwitchTotals>,
    pub netcache: Option<NetcacheSummary>,
    pub servers: ServerAggregate,
    pub net: NetCounters,
    pub audit_failures: Vec<String>,
    pub coherence: Option<CoherenceSummary>,
}

impl RunReport {
    /// Gather the report after the clock stopped at `duration_s`.
    pub fn collect(sim: &Sim, ctx: &NetCtx) -> RunReport {
        let cfg = &sim.cfg;
        let end = sim_snapshot_end(sim, ctx);
        let base = sim
            .measure_base
            .clone()
            .expect("warmup timer fired before the horizon");
        let measured_s = (end.t_ns - base.t_ns) as f64 / 1e9;
        let span = measured_s.max(1e-9);

        let sent = end.sent - base.sent;
        let completed = end.completed - base.completed;
        let cached_served = end.cached - base.cached;
        let per_server_rps: Vec<f64> = end
            .per_server_served
            .iter()
            .zip(&base.per_server_served)
            .map(|(a, b)| (a - b) as f64 / span)
            .collect();
        let max_srv = per_server_rps.iter().cloned().fold(0.0_f64, f64::max);
        let min_srv = per_server_rps.iter().cloned().fold(f64::INFINITY, f64::min);
        let balancing_efficiency = if max_srv <= 0.0 { 1.0 } else { min_srv / max_srv };

        let cache_hits = end.cache_hits - base.cache_hits;
        let overflow = end.overflow - base.overflow;

        let mut latency = Vec::new();
        for class in LatencyClass::ALL {
            let mut samples: Vec<u64> = Vec::new();
            let mut count = 0;
            for c in sim.clients() {
                let r = c.reservoir(class);
                count += r.count();
                samples.extend_from_slice(r.samples());
            }
            if count > 0 {
                samples.sort_unstable();
                let rank = |q: f64| {
                    let r = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
                    samples[r - 1]
                };
                latency.push(LatencySummary {
                    class,
                    count,
                    median_us: rank(0.5),
                    p99_us: rank(0.99),
                });
            }
        }

        let mut servers = ServerAggregate::default();
        for s in sim.servers() {
            servers.reads += s.stats.reads;
            servers.writes += s.stats.writes;
            servers.fetches += s.stats.fetches;
            servers.corrections += s.stats.corrections;
            servers.not_found += s.stats.not_found;
        }

        let mut spurious = 0;
        let mut not_found = 0;
        let mut ownership_violations = 0;
        let mut corrections = 0;
        for c in sim.clients() {
            spurious += c.stats.spurious;
            not_found += c.stats.not_found;
            ownership_violations += c.stats.ownership_violations;
            corrections += c.stats.corrections;
        }

        let coherence_summary = if cfg.sim.record_history {
            Some(CoherenceSummary::from_report(&coherence::check(&sim.history)))
        } else {
            None
        };

        RunReport {
            scheme: cfg.scheme.name().to_string(),
            seed: cfg.seed,
            duration_s: cfg.sim.duration_s,
            warmup_s: cfg.sim.warmup_s,
            measured_s,
            offered_rps: cfg.clients.offered_rps,
            sent,
            completed,
            completion_ratio: if sent == 0 { 1.0 } else { completed as f64 / sent as f64 },
            throughput_rps: completed as f64 / span,
            cached_served,
            cached_fraction: if completed == 0 {
                0.0
            } else {
                cached_served as f64 / completed as f64
            },
            corrections,
            spurious,
            not_found,
            ownership_violations,
            per_server_rps,
            balancing_efficiency,
            latency,
            cache_hits,
            overflow,
            overflow_ratio_hits: if cache_hits == 0 {
                0.0
            } else {
                overflow as f64 / cache_hits as f64
            },
            overflow_ratio_all: if sent == 0 { 0.0 } else { overflow as f64 / sent as f64 },
            recirc_occupancy_end: sim.recirc_occupancy(),
            revisit_measured_ns: sim.revisit_mean_ns(),
            windows: sim.windows.clone(),
            controller_periods: sim
                .orbit_parts()
                .map(|(_, ctl)| ctl.log.clone())
                .unwrap_or_default(),
            switch_totals: sim.orbit_parts().map(|(sw, _)| sw.totals.clone()),
            netcache: sim.netcache_parts().map(|(sw, ctl)| NetcacheSummary {
                stored: sw.stored_count(),
                entries: sw.entry_count(),
                rejected: ctl.rejected_count(),
                rollbacks: ctl.rollbacks,
                oversize_rejects: sw.totals.oversize_rejects,
                cache_hits: sw.totals.cache_hits,
                served: sw.totals.served,
            }),
            servers,
            net: ctx.counters.clone(),
            audit_failures: sim.audit(ctx),
            coherence: coherence_summary,
        }
    }

    pub fn audits_passed(&self) -> bool {
        self.audit_failures.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-window timeline, one row per metric window.
    pub fn windows_csv(&self) -> String {
        let mut out = String::from(
            "t_s,sent,completed,cached_served,corrections,cache_hits,overflow,recirc_occupancy,min_server,max_server\n",
        );
        for w in &self.windows {
            let min = w.per_server_served.iter().min().copied().unwrap_or(0);
            let max = w.per_server_served.iter().max().copied().unwrap_or(0);
            out.push_str(&format!(
                "{:.3},{},{},{},{},{},{},{},{},{}\n",
                w.t_s,
                w.sent,
                w.completed,
                w.cached_served,
                w.corrections,
                w.cache_hits,
                w.overflow,
                w.recirc_occupancy,
                min,
                max
            ));
        }
        out
    }

    pub fn periods_csv(&self) -> String {
        let mut out = String::from(
            "period,evictions,insertions,target_size,overflow_ratio,cache_hits,overflow,rollbacks\n",
        );
        for p in &self.controller_periods {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{},{}\n",
                p.period_id,
                p.evictions,
                p.insertions,
                p.target_size,
                p.overflow_ratio,
                p.cache_hits,
                p.overflow,
                p.rollbacks
            ));
        }
        out
    }

    pub const SUMMARY_HEADER: &'static str = "scheme,seed,offered_rps,throughput_rps,completion_ratio,cached_fraction,balancing_efficiency,overflow_ratio_hits,corrections,audit_failures\n";

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{:.1},{:.1},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            self.scheme,
            self.seed,
            self.offered_rps,
            self.throughput_rps,
            self.completion_ratio,
            self.cached_fraction,
            self.balancing_efficiency,
            self.overflow_ratio_hits,
            self.corrections,
            self.audit_failures.len()
        )
    }

    /// Write summary.json, windows.csv, and (when present) periods.csv,
    /// history.jsonl, preload_keys.txt under `dir`.
    pub fn write_files(&self, dir: &Path, sim: &Sim) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.to_json())?;
        std::fs::write(dir.join("windows.csv"), self.windows_csv())?;
        if !self.controller_periods.is_empty() {
            std::fs::write(dir.join("periods.csv"), self.periods_csv())?;
        }
        if sim.cfg.sim.record_history {
            coherence::save_jsonl(&sim.history, &dir.join("history.jsonl"))?;
        }
        if !sim.preload_keys.is_empty() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(
                dir.join("preload_keys.txt"),
            )?);
            for key in &sim.preload_keys {
                f.write_all(key)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

/// Counter state at the horizon, same shape the warmup snapshot uses.
fn sim_snapshot_end(sim: &Sim, ctx: &NetCtx) -> crate::harness::sim::CountSnap {
    sim.end_snapshot(ctx.now.ns())
}

/// Combined one-row-per-run table for sweeps.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(RunReport::SUMMARY_HEADER);
    for r in reports {
        out.push_str(&r.summary_row());
    }
    out
}
