//! Experiment configuration: TOML on disk, environment overrides, and
//! validation with field-path error messages.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{DynamicPattern, SizeModel, WorkloadConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("environment variable {name}: {reason}")]
    Env { name: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Orbitcache,
    Netcache,
    Nocache,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Orbitcache => "orbitcache",
            Scheme::Netcache => "netcache",
            Scheme::Nocache => "nocache",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "d_duration")]
    pub duration_s: f64,
    #[serde(default = "d_warmup")]
    pub warmup_s: f64,
    /// Bring-up delay before clients start: preload fetches settle first.
    #[serde(default = "d_settle")]
    pub settle_s: f64,
    #[serde(default = "d_pipeline")]
    pub pipeline_ns: u64,
    #[serde(default = "d_prop")]
    pub link_prop_ns: u64,
    #[serde(default = "d_bw")]
    pub link_bw_gbps: f64,
    #[serde(default = "d_ctrl_delay")]
    pub control_delay_ns: u64,
    /// Bernoulli loss on switch->server links (fetch-retry experiments).
    #[serde(default)]
    pub server_link_loss: f64,
    /// Record the read/write history for the coherence audit. Costs memory
    /// proportional to the request count.
    #[serde(default)]
    pub record_history: bool,
    /// Metric window length for timelines.
    #[serde(default = "d_window")]
    pub window_s: f64,
}

fn d_duration() -> f64 {
    5.0
}
fn d_warmup() -> f64 {
    0.5
}
fn d_settle() -> f64 {
    0.05
}
fn d_pipeline() -> u64 {
    400
}
fn d_prop() -> u64 {
    1_000
}
fn d_bw() -> f64 {
    100.0
}
fn d_ctrl_delay() -> u64 {
    100_000
}
fn d_window() -> f64 {
    1.0
}

impl Default for SimSection {
    fn default() -> SimSection {
        SimSection {
            duration_s: d_duration(),
            warmup_s: d_warmup(),
            settle_s: d_settle(),
            pipeline_ns: d_pipeline(),
            link_prop_ns: d_prop(),
            link_bw_gbps: d_bw(),
            control_delay_ns: d_ctrl_delay(),
            server_link_loss: 0.0,
            record_history: false,
            window_s: d_window(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    #[serde(default = "d_cache_size")]
    pub size: usize,
    #[serde(default = "d_queue_slots")]
    pub queue_slots: usize,
    #[serde(default)]
    pub auto_size: bool,
    #[serde(default = "d_min_size")]
    pub min_size: usize,
    #[serde(default = "d_max_size")]
    pub max_size: usize,
    #[serde(default = "d_threshold")]
    pub overflow_threshold: f64,
    #[serde(default = "d_period")]
    pub period_s: f64,
    #[serde(default = "d_fetch_timeout")]
    pub fetch_timeout_ms: f64,
    #[serde(default = "d_fetch_retries")]
    pub fetch_retries: u32,
    #[serde(default)]
    pub flush_on_evict: bool,
    #[serde(default = "d_true")]
    pub preload: bool,
    #[serde(default)]
    pub multi_packet: bool,
}

fn d_cache_size() -> usize {
    128
}
fn d_queue_slots() -> usize {
    8
}
fn d_min_size() -> usize {
    8
}
fn d_max_size() -> usize {
    1024
}
fn d_threshold() -> f64 {
    0.01
}
fn d_period() -> f64 {
    1.0
}
fn d_fetch_timeout() -> f64 {
    10.0
}
fn d_fetch_retries() -> u32 {
    5
}
fn d_true() -> bool {
    true
}

impl Default for CacheSection {
    fn default() -> CacheSection {
        CacheSection {
            size: d_cache_size(),
            queue_slots: d_queue_slots(),
            auto_size: false,
            min_size: d_min_size(),
            max_size: d_max_size(),
            overflow_threshold: d_threshold(),
            period_s: d_period(),
            fetch_timeout_ms: d_fetch_timeout(),
            fetch_retries: d_fetch_retries(),
            flush_on_evict: false,
            preload: true,
            multi_packet: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetcacheSection {
    #[serde(default = "d_nc_capacity")]
    pub capacity: usize,
    #[serde(default = "d_nc_key_limit")]
    pub key_limit: usize,
    #[serde(default = "d_nc_value_limit")]
    pub value_limit: usize,
    #[serde(default = "d_true")]
    pub preload: bool,
}

fn d_nc_capacity() -> usize {
    1024
}
fn d_nc_key_limit() -> usize {
    16
}
fn d_nc_value_limit() -> usize {
    128
}

impl Default for NetcacheSection {
    fn default() -> NetcacheSection {
        NetcacheSection {
            capacity: d_nc_capacity(),
            key_limit: d_nc_key_limit(),
            value_limit: d_nc_value_limit(),
            preload: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeSpec {
    Point { bytes: u32 },
    Bimodal { p_small: f64, small: u32, large: u32 },
    Histogram { file: PathBuf },
}

impl Default for SizeSpec {
    fn default() -> SizeSpec {
        SizeSpec::Bimodal { p_small: 0.82, small: 64, large: 1024 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternSpec {
    Static,
    HotIn { swap_count: usize, period_s: f64 },
}

impl Default for PatternSpec {
    fn default() -> PatternSpec {
        PatternSpec::Static
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(default = "d_keys")]
    pub keys: usize,
    #[serde(default = "d_zipf")]
    pub zipf: f64,
    #[serde(default = "d_key_bytes")]
    pub key_bytes: usize,
    #[serde(default)]
    pub write_ratio: f64,
    #[serde(default)]
    pub value_sizes: SizeSpec,
    #[serde(default)]
    pub pattern: PatternSpec,
}

fn d_keys() -> usize {
    100_000
}
fn d_zipf() -> f64 {
    0.99
}
fn d_key_bytes() -> usize {
    16
}

impl Default for WorkloadSection {
    fn default() -> WorkloadSection {
        WorkloadSection {
            keys: d_keys(),
            zipf: d_zipf(),
            key_bytes: d_key_bytes(),
            write_ratio: 0.0,
            value_sizes: SizeSpec::default(),
            pattern: PatternSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    #[serde(default = "d_client_count")]
    pub count: usize,
    /// Aggregate open-loop request rate across all clients.
    #[serde(default = "d_offered")]
    pub offered_rps: f64,
    /// Truncated-hash experiments; 0 = full width.
    #[serde(default)]
    pub hash_width_bits: u32,
}

fn d_client_count() -> usize {
    4
}
fn d_offered() -> f64 {
    100_000.0
}

impl Default for ClientSection {
    fn default() -> ClientSection {
        ClientSection {
            count: d_client_count(),
            offered_rps: d_offered(),
            hash_width_bits: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "d_server_count")]
    pub count: usize,
    /// Per-server service rate cap (requests per second).
    #[serde(default = "d_server_rate")]
    pub rate_rps: u64,
    #[serde(default = "d_cms_width")]
    pub cms_width: usize,
}

fn d_server_count() -> usize {
    32
}
fn d_server_rate() -> u64 {
    100_000
}
fn d_cms_width() -> usize {
    65_536
}

impl Default for ServerSection {
    fn default() -> ServerSection {
        ServerSection {
            count: d_server_count(),
            rate_rps: d_server_rate(),
            cms_width: d_cms_width(),
        }
    }
}

/// Deliberate misbehavior for coherence-audit validation runs.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    #[serde(default)]
    pub skip_invalidate_on_write: bool,
    #[serde(default)]
    pub skip_drop_invalid: bool,
    #[serde(default)]
    pub premature_write_apply_lag_us: u64,
}

impl FaultSection {
    pub fn any(self) -> bool {
        self.skip_invalidate_on_write
            || self.skip_drop_invalid
            || self.premature_write_apply_lag_us > 0
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for reports; empty = keep everything in memory.
    #[serde(default)]
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub cache: CacheSection,
    #[serde(default)]
    pub netcache: NetcacheSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub clients: ClientSection,
    #[serde(default)]
    pub servers: ServerSection,
    #[serde(default)]
    pub faults: FaultSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn basic(scheme: Scheme, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            scheme,
            sim: SimSection::default(),
            cache: CacheSection::default(),
            netcache: NetcacheSection::default(),
            workload: WorkloadSection::default(),
            clients: ClientSection::default(),
            servers: ServerSection::default(),
            faults: FaultSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|source| ConfigError::Toml { path: origin.to_path_buf(), source })?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        ExperimentConfig::from_toml_str(&text, path)
    }

    /// ORBITSIM_SEED and ORBITSIM_OUT take precedence over the file.
    /// Idempotent; [`ExperimentConfig::load`] already applies it.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var("ORBITSIM_SEED") {
            self.seed = v.trim().parse().map_err(|_| ConfigError::Env {
                name: "ORBITSIM_SEED",
                reason: format!("expected an unsigned integer, got {v:?}"),
            })?;
        }
        if let Ok(v) = std::env::var("ORBITSIM_OUT") {
            self.output.dir = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sim.duration_s <= 0.0 {
            return Err(invalid("sim.duration_s", "must be positive"));
        }
        if self.sim.warmup_s < 0.0 || self.sim.warmup_s >= self.sim.duration_s {
            return Err(invalid("sim.warmup_s", "must be in [0, sim.duration_s)"));
        }
        if self.sim.settle_s < 0.0 || self.sim.settle_s >= self.sim.duration_s {
            return Err(invalid("sim.settle_s", "must be in [0, sim.duration_s)"));
        }
        if self.sim.window_s <= 0.0 {
            return Err(invalid("sim.window_s", "must be positive"));
        }
        if self.sim.link_bw_gbps <= 0.0 {
            return Err(invalid("sim.link_bw_gbps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.sim.server_link_loss) {
            return Err(invalid("sim.server_link_loss", "must be a probability"));
        }
        if self.workload.keys == 0 || self.workload.keys > u32::MAX as usize {
            return Err(invalid("workload.keys", "must be in [1, 2^32)"));
        }
        if self.workload.zipf < 0.0 {
            return Err(invalid("workload.zipf", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.workload.write_ratio) {
            return Err(invalid("workload.write_ratio", "must be in [0, 1]"));
        }
        if self.workload.key_bytes == 0 {
            return Err(invalid("workload.key_bytes", "must be positive"));
        }
        let digits = (self.workload.keys as f64).log10().ceil().max(1.0) as usize;
        if self.workload.key_bytes < digits {
            return Err(invalid(
                "workload.key_bytes",
                format!("{} keys need at least {digits} decimal digits", self.workload.keys),
            ));
        }
        if let SizeSpec::Bimodal { p_small, .. } = self.workload.value_sizes {
            if !(0.0..=1.0).contains(&p_small) {
                return Err(invalid("workload.value_sizes.p_small", "must be in [0, 1]"));
            }
        }
        if let PatternSpec::HotIn { swap_count, period_s } = self.workload.pattern {
            if period_s <= 0.0 {
                return Err(invalid("workload.pattern.period_s", "must be positive"));
            }
            if swap_count == 0 {
                return Err(invalid("workload.pattern.swap_count", "must be positive"));
            }
        }
        if self.clients.count == 0 || self.clients.count > 64 {
            return Err(invalid("clients.count", "must be in [1, 64]"));
        }
        if self.clients.offered_rps <= 0.0 {
            return Err(invalid("clients.offered_rps", "must be positive"));
        }
        if self.clients.hash_width_bits > 128 {
            return Err(invalid("clients.hash_width_bits", "must be at most 128"));
        }
        if self.servers.count == 0 || self.servers.count > 256 {
            return Err(invalid("servers.count", "must be in [1, 256]"));
        }
        if self.servers.rate_rps == 0 {
            return Err(invalid("servers.rate_rps", "must be positive"));
        }
        if self.servers.cms_width == 0 {
            return Err(invalid("servers.cms_width", "must be positive"));
        }
        if self.scheme == Scheme::Orbitcache {
            if self.cache.size == 0 {
                return Err(invalid("cache.size", "must be positive"));
            }
            if self.cache.queue_slots == 0 {
                return Err(invalid("cache.queue_slots", "must be positive"));
            }
            if self.cache.min_size == 0 || self.cache.min_size > self.cache.max_size {
                return Err(invalid("cache.min_size", "must be in [1, cache.max_size]"));
            }
            if self.cache.period_s <= 0.0 {
                return Err(invalid("cache.period_s", "must be positive"));
            }
            if self.cache.fetch_timeout_ms <= 0.0 {
                return Err(invalid("cache.fetch_timeout_ms", "must be positive"));
            }
        }
        if self.scheme == Scheme::Netcache {
            if self.netcache.capacity == 0 {
                return Err(invalid("netcache.capacity", "must be positive"));
            }
            if self.netcache.key_limit == 0 || self.netcache.value_limit == 0 {
                return Err(invalid("netcache.key_limit", "limits must be positive"));
            }
            if self.clients.hash_width_bits != 0 {
                return Err(invalid(
                    "clients.hash_width_bits",
                    "truncated-hash runs are not supported by this scheme",
                ));
            }
        }
        Ok(())
    }

    pub fn bw_bps(&self) -> u64 {
        (self.sim.link_bw_gbps * 1e9).round() as u64
    }

    /// The shared key universe both clients and the preloader draw from.
    pub fn workload_config(&self) -> Result<WorkloadConfig, ConfigError> {
        let size_model = match &self.workload.value_sizes {
            SizeSpec::Point { bytes } => SizeModel::Point { bytes: *bytes },
            SizeSpec::Bimodal { p_small, small, large } => {
                SizeModel::Bimodal { p_small: *p_small, small: *small, large: *large }
            }
            SizeSpec::Histogram { file } => {
                SizeModel::from_histogram_file(file).map_err(|source| ConfigError::Io {
                    path: file.clone(),
                    source,
                })?
            }
        };
        let pattern = match self.workload.pattern {
            PatternSpec::Static => DynamicPattern::Static,
            PatternSpec::HotIn { swap_count, period_s } => {
                DynamicPattern::HotIn { swap_count, period_s }
            }
        };
        Ok(WorkloadConfig {
            keys: self.workload.keys,
            alpha: self.workload.zipf,
            key_bytes: self.workload.key_bytes,
            write_ratio: self.workload.write_ratio,
            size_model,
            pattern,
            seed: self.seed,
        })
    }
}
