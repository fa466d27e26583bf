//! Command-line front end: single experiment runs and one-axis sweeps.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use orbitsim::harness::{self, ExperimentConfig, RunReport, Scheme};

#[derive(Parser)]
#[command(name = "orbitsim", version, about = "In-network cache simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary.
    Run {
        /// TOML experiment config; defaults apply when omitted.
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the full report as JSON instead of the summary block.
        #[arg(long)]
        json: bool,
    },
    /// Find the largest sustainable offered load by bisection.
    Saturate {
        /// TOML experiment config; defaults apply when omitted.
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Offered load known to be sustainable, req/s.
        #[arg(long, default_value_t = 50_000.0)]
        lo: f64,
        /// Offered load expected to saturate, req/s.
        #[arg(long, default_value_t = 1_500_000.0)]
        hi: f64,
        /// Bisection steps.
        #[arg(long, default_value_t = 6)]
        steps: usize,
    },
    /// Run the same experiment across one swept parameter.
    Sweep {
        /// TOML experiment config; defaults apply when omitted.
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Which knob the values apply to.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values for the swept knob.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Axis {
    CacheSize,
    WriteRatio,
    Servers,
    Offered,
}

#[derive(Copy, Clone, ValueEnum)]
enum SchemeArg {
    Orbitcache,
    Netcache,
    Nocache,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Orbitcache => Scheme::Orbitcache,
            SchemeArg::Netcache => Scheme::Netcache,
            SchemeArg::Nocache => Scheme::Nocache,
        }
    }
}

#[derive(Args)]
struct Overrides {
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds, including warmup.
    #[arg(long)]
    duration: Option<f64>,
    /// Aggregate offered load across all clients, requests per second.
    #[arg(long)]
    offered: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    servers: Option<usize>,
    /// Per-server service ceiling, requests per second.
    #[arg(long)]
    server_rate: Option<u64>,
    #[arg(long)]
    cache_size: Option<usize>,
    #[arg(long)]
    write_ratio: Option<f64>,
    #[arg(long)]
    keys: Option<usize>,
    #[arg(long)]
    zipf: Option<f64>,
    /// Truncate request key hashes to this many bits (0 = full width).
    #[arg(long)]
    hash_bits: Option<u32>,
    /// Record the read/write history and check it after the run.
    #[arg(long)]
    record_history: bool,
    /// Directory for summary.json, windows.csv, and friends.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.scheme {
            cfg.scheme = s.into();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.duration {
            cfg.sim.duration_s = v;
        }
        if let Some(v) = self.offered {
            cfg.clients.offered_rps = v;
        }
        if let Some(v) = self.clients {
            cfg.clients.count = v;
        }
        if let Some(v) = self.servers {
            cfg.servers.count = v;
        }
        if let Some(v) = self.server_rate {
            cfg.servers.rate_rps = v;
        }
        if let Some(v) = self.cache_size {
            cfg.cache.size = v;
        }
        if let Some(v) = self.write_ratio {
            cfg.workload.write_ratio = v;
        }
        if let Some(v) = self.keys {
            cfg.workload.keys = v;
        }
        if let Some(v) = self.zipf {
            cfg.workload.zipf = v;
        }
        if let Some(v) = self.hash_bits {
            cfg.clients.hash_width_bits = v;
        }
        if self.record_history {
            cfg.sim.record_history = true;
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.display().to_string();
        }
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::basic(Scheme::Orbitcache, 1),
    };
    cfg.apply_env()?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(r: &RunReport) {
    println!("scheme               {}", r.scheme);
    println!("seed                 {}", r.seed);
    println!(
        "measured             {:.2}s of {:.2}s (warmup {:.2}s)",
        r.measured_s, r.duration_s, r.warmup_s
    );
    println!("offered              {:.0} req/s", r.offered_rps);
    println!(
        "throughput           {:.0} req/s ({} completed / {} sent)",
        r.throughput_rps, r.completed, r.sent
    );
    println!("completion ratio     {:.4}", r.completion_ratio);
    println!("cached fraction      {:.4}", r.cached_fraction);
    println!("balancing efficiency {:.4}", r.balancing_efficiency);
    if r.cache_hits > 0 {
        println!(
            "cache hits           {} (overflow {} = {:.4} of hits)",
            r.cache_hits, r.overflow, r.overflow_ratio_hits
        );
    }
    for l in &r.latency {
        println!(
            "latency {:?}: n={} p50={}us p99={}us",
            l.class, l.count, l.median_us, l.p99_us
        );
    }
    if r.corrections + r.spurious + r.not_found + r.ownership_violations > 0 {
        println!(
            "corrections {} spurious {} not_found {} ownership_violations {}",
            r.corrections, r.spurious, r.not_found, r.ownership_violations
        );
    }
    if let Some(c) = &r.coherence {
        println!(
            "coherence            {} reads checked, {} violations",
            c.reads_checked, c.violations
        );
        if let Some(first) = &c.first {
            println!("  first violation: {first}");
        }
    }
    if r.audit_failures.is_empty() {
        println!("audits               ok");
    } else {
        for f in &r.audit_failures {
            println!("AUDIT FAILURE: {f}");
        }
    }
}

fn run_one(cfg: ExperimentConfig) -> RunReport {
    harness::run_experiment(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides, json } => {
            let cfg = load_config(&config, &overrides)?;
            let report = run_one(cfg);
            if json {
                println!("{}", report.to_json());
            } else {
                print_summary(&report);
            }
            let coherence_bad = report.coherence.as_ref().is_some_and(|c| c.violations > 0);
            if !report.audits_passed() || coherence_bad {
                bail!("run failed audit or coherence checks");
            }
        }
        Command::Saturate { config, overrides, lo, hi, steps } => {
            let cfg = load_config(&config, &overrides)?;
            let report = harness::find_knee(&cfg, lo, hi, steps);
            println!(
                "saturated at {:.0} req/s offered, {:.0} req/s completed",
                report.offered_rps, report.throughput_rps
            );
            print_summary(&report);
            if !report.audits_passed() {
                bail!("knee run failed audits");
            }
        }
        Command::Sweep { config, overrides, axis, values } => {
            let base = load_config(&config, &overrides)?;
            let base_out = base.output.dir.clone();
            let mut reports = Vec::new();
            let mut any_failed = false;
            for &v in &values {
                let mut cfg = base.clone();
                match axis {
                    Axis::CacheSize => cfg.cache.size = v as usize,
                    Axis::WriteRatio => cfg.workload.write_ratio = v,
                    Axis::Servers => cfg.servers.count = v as usize,
                    Axis::Offered => cfg.clients.offered_rps = v,
                }
                if !base_out.is_empty() {
                    cfg.output.dir = format!("{base_out}/{}", fmt_value(v));
                }
                cfg.validate()?;
                let report = run_one(cfg);
                any_failed |= !report.audits_passed();
                eprint!("{}", report.summary_row());
                reports.push(report);
            }
            print!("{}", harness::summary_csv(&reports));
            if !base_out.is_empty() {
                std::fs::write(
                    PathBuf::from(&base_out).join("sweep.csv"),
                    harness::summary_csv(&reports),
                )?;
            }
            if any_failed {
                bail!("one or more sweep runs failed audits");
            }
        }
    }
    Ok(())
}

fn fmt_value(v: f64) -> String {
    if (v.fract()).abs() < 1e-9 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
