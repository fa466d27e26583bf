//! Key-popularity and size generators, dynamic-popularity patterns, and the
//! cacheability analyzer.
//!
//! Popularity is drawn over ranks; a seeded permutation maps rank to key id
//! so "the hottest key" is not always key 0. Value sizes are assigned per
//! key id (stratified, so the cacheable fraction is exact over the item
//! population) while [`SizeModel::sample`] stays an independent draw for
//! statistical use.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::messages::hash_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum OpKind {
    Read,
    Write,
}

// --- popularity ---------------------------------------------------------

/// Zipf(alpha) over ranks 1..=n via inverse-CDF sampling. alpha=0 is the
/// uniform degenerate case.
pub struct ZipfGen {
    n: usize,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ZipfGen {
    pub fn new(n: usize, alpha: f64, seed: u64) -> ZipfGen {
        assert!(n >= 1);
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        for rank in 1..=n {
            acc += (rank as f64).powf(-alpha);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        cdf[n - 1] = 1.0;
        ZipfGen { n, cdf, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Rank in [1, n]; rank 1 is the hottest.
    pub fn sample_rank(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        self.cdf.partition_point(|&c| c < u) + 1
    }

    /// Exact probability of a rank, from the same normalization the
    /// sampler uses.
    pub fn pmf(&self, rank: usize) -> f64 {
        assert!((1..=self.n).contains(&rank));
        let lo = if rank == 1 { 0.0 } else { self.cdf[rank - 2] };
        self.cdf[rank - 1] - lo
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

// --- sizes ---------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeModel {
    Point { bytes: u32 },
    Bimodal { p_small: f64, small: u32, large: u32 },
    Histogram { sizes: Vec<u32>, weights: Vec<f64> },
}

impl SizeModel {
    /// Independent draw from the distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        match self {
            SizeModel::Point { bytes } => *bytes,
            SizeModel::Bimodal { p_small, small, large } => {
                if rng.gen::<f64>() < *p_small {
                    *small
                } else {
                    *large
                }
            }
            SizeModel::Histogram { sizes, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (s, w) in sizes.iter().zip(weights) {
                    u -= w;
                    if u <= 0.0 {
                        return *s;
                    }
                }
                *sizes.last().unwrap()
            }
        }
    }

    pub fn max_bytes(&self) -> u32 {
        match self {
            SizeModel::Point { bytes } => *bytes,
            SizeModel::Bimodal { small, large, .. } => (*small).max(*large),
            SizeModel::Histogram { sizes, .. } => sizes.iter().copied().max().unwrap_or(0),
        }
    }

    /// Two-column text: `size_bytes probability` per line, `#` comments and
    /// blank lines ignored.
    pub fn from_histogram_file(path: &Path) -> std::io::Result<SizeModel> {
        let text = std::fs::read_to_string(path)?;
        let mut sizes = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("histogram line {}: {detail}", lineno + 1),
                )
            };
            let mut cols = line.split_whitespace();
            let (Some(size_tok), Some(w_tok)) = (cols.next(), cols.next()) else {
                return Err(bad("expected `size probability`".into()));
            };
            let size: u32 = size_tok.parse().map_err(|e| bad(format!("{e}")))?;
            let w: f64 = w_tok.parse().map_err(|e| bad(format!("{e}")))?;
            sizes.push(size);
            weights.push(w);
        }
        if sizes.is_empty() {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "empty histogram"));
        }
        Ok(SizeModel::Histogram { sizes, weights })
    }
}

// --- dynamics -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicPattern {
    Static,
    /// At each period boundary the `swap_count` hottest and coldest ranks
    /// exchange their keys.
    HotIn { swap_count: usize, period_s: f64 },
}

// --- value synthesis -------------------------------------------------------

/// Writer id embedded in values loaded at startup.
pub const PRELOAD_WRITER: u8 = 0xFF;
/// key tag 8B | version 4B | writer 1B | declared length 2B | padding.
pub const VALUE_HEADER: usize = 15;

/// Deterministic value bytes: a key-derived tag (so any reply's value can
/// be checked against the requested key), a version/writer identity for
/// ordering audits, and size padding.
pub fn make_value(key: &[u8], version: u32, writer: u8, size: usize) -> Arc<[u8]> {
    assert!(size >= VALUE_HEADER + 1, "value size {size} below header");
    assert!(size <= u16::MAX as usize);
    let tag = (hash_key(key) >> 64) as u64;
    let mut v = Vec::with_capacity(size);
    v.extend_from_slice(&tag.to_be_bytes());
    v.extend_from_slice(&version.to_be_bytes());
    v.push(writer);
    v.extend_from_slice(&(size as u16).to_be_bytes());
    let tag_bytes = tag.to_be_bytes();
    for i in v.len()..size {
        v.push(tag_bytes[i % 8] ^ version as u8);
    }
    v.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueTag {
    pub key_tag: u64,
    pub version: u32,
    pub writer: u8,
}

pub fn parse_value(value: &[u8]) -> Option<ValueTag> {
    if value.len() < VALUE_HEADER {
        return None;
    }
    let declared = u16::from_be_bytes(value[13..15].try_into().unwrap()) as usize;
    if declared != value.len() {
        return None;
    }
    Some(ValueTag {
        key_tag: u64::from_be_bytes(value[0..8].try_into().unwrap()),
        version: u32::from_be_bytes(value[8..12].try_into().unwrap()),
        writer: value[12],
    })
}

/// Does this value belong to this key?
pub fn value_owned_by(key: &[u8], value: &[u8]) -> bool {
    parse_value(value).is_some_and(|t| t.key_tag == (hash_key(key) >> 64) as u64)
}

// --- cacheability -----------------------------------------------------------

/// Fraction of items whose key AND value fit the limits.
pub fn cacheable_ratio<I>(sizes: I, key_limit: usize, value_limit: usize) -> f64
where
    I: IntoIterator<Item = (usize, usize)>,
{
    assert!(key_limit > 0 && value_limit > 0);
    let mut total = 0u64;
    let mut ok = 0u64;
    for (k, v) in sizes {
        total += 1;
        if k <= key_limit && v <= value_limit {
            ok += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        ok as f64 / total as f64
    }
}

// --- the composed generator ---------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WorkloadConfig {
    pub keys: usize,
    pub alpha: f64,
    pub key_bytes: usize,
    pub write_ratio: f64,
    pub size_model: SizeModel,
    pub pattern: DynamicPattern,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> WorkloadConfig {
        WorkloadConfig {
            keys: 100_000,
            alpha: 0.99,
            key_bytes: 16,
            write_ratio: 0.0,
            size_model: SizeModel::Bimodal { p_small: 0.82, small: 64, large: 1024 },
            pattern: DynamicPattern::Static,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RequestSpec {
    pub key_id: u32,
    pub key: Arc<[u8]>,
    pub op: OpKind,
    /// Assigned size of this key's value (writes synthesize one this big).
    pub value_size: u32,
}

pub struct WorkloadGen {
    cfg: WorkloadConfig,
    zipf: ZipfGen,
    /// perm[rank-1] = key_id.
    perm: Vec<u32>,
    keys: Vec<Arc<[u8]>>,
    sizes: Vec<u32>,
    op_rng: ChaCha8Rng,
    pub swaps_applied: u64,
}

/// Stratification granularity for per-key size assignment.
const SIZE_STRATA: u32 = 10_000;

impl WorkloadGen {
    pub fn new(cfg: WorkloadConfig) -> WorkloadGen {
        let stream = cfg.seed;
        WorkloadGen::with_stream_seed(cfg, stream)
    }

    /// Same key universe (permutation, sizes) as any generator built from
    /// this config, but an independent sampling stream. Lets many clients
    /// share one workload definition while drawing their own arrivals.
    pub fn with_stream_seed(cfg: WorkloadConfig, stream_seed: u64) -> WorkloadGen {
        assert!(cfg.keys >= 1 && cfg.keys <= u32::MAX as usize);
        assert!((0.0..=1.0).contains(&cfg.write_ratio));
        let zipf = ZipfGen::new(cfg.keys, cfg.alpha, stream_seed.wrapping_add(0x5A1F));
        let mut perm: Vec<u32> = (0..cfg.keys as u32).collect();
        let mut perm_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E12));
        perm.shuffle(&mut perm_rng);
        let keys: Vec<Arc<[u8]>> =
            (0..cfg.keys as u32).map(|id| Self::key_string(id, cfg.key_bytes)).collect();
        let mut size_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x517E));
        let sizes: Vec<u32> = (0..cfg.keys as u32)
            .map(|id| match &cfg.size_model {
                SizeModel::Point { bytes } => *bytes,
                // Stratified: the small fraction over the key population is
                // exact, not sampled.
                SizeModel::Bimodal { p_small, small, large } => {
                    let cut = (*p_small * SIZE_STRATA as f64).round() as u32;
                    if id % SIZE_STRATA < cut {
                        *small
                    } else {
                        *large
                    }
                }
                m @ SizeModel::Histogram { .. } => m.sample(&mut size_rng),
            })
            .collect();
        WorkloadGen {
            op_rng: ChaCha8Rng::seed_from_u64(stream_seed.wrapping_add(0x0715)),
            cfg,
            zipf,
            perm,
            keys,
            sizes,
            swaps_applied: 0,
        }
    }

    // Digits are stored least-significant first. The partition function
    // reads the high bits of the key hash, and those bits are only driven
    // by the early bytes of short keys; ids must differ up front or nearly
    // sequential keys collapse onto a few partitions.
    fn key_string(id: u32, width: usize) -> Arc<[u8]> {
        let s = format!("{id:0width$}");
        assert_eq!(s.len(), width, "key id {id} overflows {width}-byte keys");
        let mut bytes = s.into_bytes();
        bytes.reverse();
        bytes.into()
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.cfg
    }

    pub fn sample(&mut self) -> RequestSpec {
        let rank = self.zipf.sample_rank();
        let key_id = self.perm[rank - 1];
        let op = if self.cfg.write_ratio > 0.0 && self.op_rng.gen::<f64>() < self.cfg.write_ratio
        {
            OpKind::Write
        } else {
            OpKind::Read
        };
        RequestSpec {
            key_id,
            key: self.keys[key_id as usize].clone(),
            op,
            value_size: self.sizes[key_id as usize],
        }
    }

    pub fn key(&self, key_id: u32) -> &Arc<[u8]> {
        &self.keys[key_id as usize]
    }

    pub fn value_size(&self, key_id: u32) -> u32 {
        self.sizes[key_id as usize]
    }

    /// Key ids at the k hottest ranks, hottest first.
    pub fn hottest_key_ids(&self, k: usize) -> Vec<u32> {
        self.perm.iter().take(k).copied().collect()
    }

    /// Startup population: every key with its version-0 value.
    pub fn initial_items(&self) -> impl Iterator<Item = (Arc<[u8]>, Arc<[u8]>)> + '_ {
        self.keys.iter().enumerate().map(|(id, k)| {
            (k.clone(), make_value(k, 0, PRELOAD_WRITER, self.sizes[id] as usize))
        })
    }

    pub fn item_sizes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.keys.iter().zip(&self.sizes).map(|(k, &v)| (k.len(), v as usize))
    }

    /// Exchange the keys at the hottest and coldest `swap_count` ranks.
    /// Popularity masses are untouched; only the rank→key mapping moves.
    pub fn apply_hot_in_swap(&mut self) {
        let DynamicPattern::HotIn { swap_count, .. } = self.cfg.pattern else {
            return;
        };
        let n = self.perm.len();
        let m = swap_count.min(n / 2);
        for i in 0..m {
            self.perm.swap(i, n - m + i);
        }
        self.swaps_applied += 1;
    }

    pub fn pattern(&self) -> DynamicPattern {
        self.cfg.pattern
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_rank_ratio_matches_exponent() {
        let mut g = ZipfGen::new(1000, 0.99, 7);
        let mut counts = vec![0u64; 1001];
        for _ in 0..1_000_000 {
            counts[g.sample_rank()] += 1;
        }
        let ratio = counts[1] as f64 / counts[2] as f64;
        let expect = 2f64.powf(0.99);
        assert!(
            (ratio / expect - 1.0).abs() < 0.03,
            "P(1)/P(2) = {ratio:.4}, want ≈ {expect:.4}"
        );
        // The exact pmf agrees with brute-force normalization.
        let h: f64 = (1..=1000).map(|r| (r as f64).powf(-0.99)).sum();
        assert!((g.pmf(1) - 1.0 / h).abs() < 1e-12);
        let total: f64 = (1..=1000).map(|r| g.pmf(r)).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_alpha_is_uniform() {
        let mut g = ZipfGen::new(100, 0.0, 11);
        let mut counts = vec![0u64; 101];
        for _ in 0..1_000_000 {
            counts[g.sample_rank()] += 1;
        }
        let max = *counts[1..].iter().max().unwrap() as f64;
        let min = *counts[1..].iter().min().unwrap() as f64;
        assert!(max / min <= 1.1, "max/min = {:.3}", max / min);
    }

    #[test]
    fn samples_stay_in_range() {
        let mut g = ZipfGen::new(3, 1.2, 5);
        for _ in 0..10_000 {
            let r = g.sample_rank();
            assert!((1..=3).contains(&r));
        }
    }

    #[test]
    fn bimodal_sampling_fraction() {
        let m = SizeModel::Bimodal { p_small: 0.82, small: 64, large: 1024 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut small = 0u32;
        for _ in 0..100_000 {
            if m.sample(&mut rng) == 64 {
                small += 1;
            }
        }
        let frac = small as f64 / 100_000.0;
        assert!((frac - 0.82).abs() <= 0.01, "small fraction {frac}");
    }

    #[test]
    fn cacheability_examples() {
        assert_eq!(cacheable_ratio([(16, 64)], 16, 128), 1.0);
        assert_eq!(cacheable_ratio([(17, 64)], 16, 128), 0.0);
        // Stratified assignment makes the population ratio exact.
        let g = WorkloadGen::new(WorkloadConfig { keys: 20_000, ..Default::default() });
        let ratio = cacheable_ratio(g.item_sizes(), 16, 128);
        assert_eq!(ratio, 0.82);
    }

    #[test]
    fn hot_in_swap_preserves_the_key_multiset() {
        let mut g = WorkloadGen::new(WorkloadConfig {
            keys: 1000,
            pattern: DynamicPattern::HotIn { swap_count: 128, period_s: 10.0 },
            ..Default::default()
        });
        let hot_before = g.hottest_key_ids(128);
        let cold_before: Vec<u32> = g.perm[1000 - 128..].to_vec();
        let mut sorted_before = g.perm.clone();
        sorted_before.sort_unstable();

        g.apply_hot_in_swap();

        assert_eq!(g.hottest_key_ids(128), cold_before, "coldest became hottest");
        assert_eq!(g.perm[1000 - 128..].to_vec(), hot_before, "hottest became coldest");
        let mut sorted_after = g.perm.clone();
        sorted_after.sort_unstable();
        assert_eq!(sorted_before, sorted_after, "permutation property kept");
        // A second swap restores the original assignment.
        g.apply_hot_in_swap();
        assert_eq!(g.hottest_key_ids(128), hot_before);
    }

    #[test]
    fn static_pattern_never_swaps() {
        let mut g = WorkloadGen::new(WorkloadConfig { keys: 100, ..Default::default() });
        let before = g.perm.clone();
        g.apply_hot_in_swap();
        assert_eq!(before, g.perm);
        assert_eq!(g.swaps_applied, 0);
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = WorkloadConfig { keys: 500, write_ratio: 0.3, ..Default::default() };
        let mut a = WorkloadGen::new(cfg.clone());
        let mut b = WorkloadGen::new(cfg);
        for _ in 0..1000 {
            let (x, y) = (a.sample(), b.sample());
            assert_eq!(x.key_id, y.key_id);
            assert_eq!(x.op, y.op);
            assert_eq!(x.value_size, y.value_size);
        }
    }

    #[test]
    fn key_strings_are_fixed_width_reversed_decimal() {
        let g = WorkloadGen::new(WorkloadConfig { keys: 100_000, ..Default::default() });
        assert_eq!(&g.key(42)[..], b"2400000000000000");
        assert_eq!(&g.key(99_999)[..], b"9999900000000000");
        assert!(g.key(7).len() == 16);
    }

    // Nearly sequential ids must not clump: the switch homes keys by the
    // high bits of the hash, and an empty partition starves its server.
    #[test]
    fn key_partitions_cover_every_server() {
        let g = WorkloadGen::new(WorkloadConfig { keys: 100_000, ..Default::default() });
        for servers in [8usize, 16, 32, 64] {
            let mut counts = vec![0u32; servers];
            for id in 0..100_000u32 {
                counts[crate::messages::partition(crate::messages::hash_key(g.key(id)), servers)] += 1;
            }
            let min = *counts.iter().min().unwrap();
            let max = *counts.iter().max().unwrap();
            assert!(min > 0, "{servers} servers: empty partition");
            assert!(
                (max as f64) / (min as f64) < 1.5,
                "{servers} servers: key spread {min}..{max}"
            );
        }
    }

    #[test]
    fn value_header_round_trip() {
        let v = make_value(b"0000000000000042", 9, 3, 64);
        assert_eq!(v.len(), 64);
        let tag = parse_value(&v).unwrap();
        assert_eq!(tag.version, 9);
        assert_eq!(tag.writer, 3);
        assert!(value_owned_by(b"0000000000000042", &v));
        assert!(!value_owned_by(b"0000000000000043", &v));
        // Truncated or foreign bytes fail to parse.
        assert!(parse_value(&v[..10]).is_none());
        assert!(parse_value(&v[..40]).is_none());
    }

    #[test]
    fn histogram_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sizes.txt");
        std::fs::write(&path, "# twitter-ish\n64 0.7\n256 0.2\n1024 0.1\n").unwrap();
        let m = SizeModel::from_histogram_file(&path).unwrap();
        assert_eq!(m.max_bytes(), 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen64 = 0;
        for _ in 0..10_000 {
            let s = m.sample(&mut rng);
            assert!([64, 256, 1024].contains(&s));
            if s == 64 {
                seen64 += 1;
            }
        }
        let frac = seen64 as f64 / 10_000.0;
        assert!((frac - 0.7).abs() < 0.03);
    }

    #[test]
    fn write_ratio_one_is_all_writes() {
        let mut g = WorkloadGen::new(WorkloadConfig {
            keys: 10,
            write_ratio: 1.0,
            ..Default::default()
        });
        for _ in 0..100 {
            assert_eq!(g.sample().op, OpKind::Write);
        }
    }

    proptest::proptest! {
        #[test]
        fn stratified_ratio_tracks_p_small(p in 0.0f64..=1.0) {
            let g = WorkloadGen::new(WorkloadConfig {
                keys: SIZE_STRATA as usize,
                size_model: SizeModel::Bimodal { p_small: p, small: 64, large: 1024 },
                ..Default::default()
            });
            let ratio = cacheable_ratio(g.item_sizes(), 16, 128);
            let want = (p * SIZE_STRATA as f64).round() / SIZE_STRATA as f64;
            proptest::prop_assert!((ratio - want).abs() < 1e-9);
        }
    }
}
