//! Disk-buffer simulation: scheduling strategies, eviction and modeled time.
//!
//! Every bucket read during search goes through a [`Simulator`], which plans
//! the reads of one (projection, level) pass under the configured strategy,
//! charges modeled disk time for misses and abstract operation counts for the
//! algorithm itself.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::LshIndex;

/// Bytes per stored bucket entry (a 32-bit point id).
pub const ENTRY_BYTES: u64 = 4;

pub const DEFAULT_QUERY_SPLITS: usize = 10;
pub const DEFAULT_PROFILE_QUERIES: usize = 1000;
pub const DEFAULT_PROFILE_REGIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub seek_ms: f64,
    /// Sequential read rate in MB (10^6 bytes) per millisecond.
    pub read_mb_per_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            seek_ms: 8.5,
            read_mb_per_ms: 0.156,
        }
    }
}

impl CostModel {
    pub fn read_ms(&self, bytes: u64) -> f64 {
        self.seek_ms + bytes as f64 / (self.read_mb_per_ms * 1e6)
    }
}

/// Converts abstract operation counts into modeled milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgCostModel {
    pub ns_per_op: f64,
}

impl Default for AlgCostModel {
    fn default() -> Self {
        Self { ns_per_op: 2.0 }
    }
}

impl AlgCostModel {
    pub fn ms(&self, ops: u64) -> f64 {
        ops as f64 * self.ns_per_op * 1e-6
    }

    /// Times a collision-counting loop on this machine.
    pub fn calibrate() -> Self {
        let n = 1 << 16;
        let mut counts = vec![0u16; n];
        let mut idx: Vec<u32> = Vec::with_capacity(n);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..n {
            idx.push(rng.random_range(0..n as u32));
        }
        let rounds = 64;
        let start = std::time::Instant::now();
        for _ in 0..rounds {
            for &i in &idx {
                let c = &mut counts[i as usize];
                *c = c.wrapping_add(1);
            }
            std::hint::black_box(&mut counts);
        }
        let ns = start.elapsed().as_nanos() as f64 / (rounds * n) as f64;
        Self {
            ns_per_op: ns.max(0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Ns1,
    Ns2,
    Mmlsh,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ns1, Strategy::Ns2, Strategy::Mmlsh];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ns1 => "NS1",
            Strategy::Ns2 => "NS2",
            Strategy::Mmlsh => "MMLSH",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ns1" => Ok(Strategy::Ns1),
            "ns2" => Ok(Strategy::Ns2),
            "mmlsh" => Ok(Strategy::Mmlsh),
            _ => Err(Error::param(format!("unknown strategy `{s}` (expected ns1, ns2 or mmlsh)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub strategy: Strategy,
    pub query_splits: usize,
    /// Ticks during which a freshly inserted bucket is protected. `None` uses
    /// the number of resident buckets at eviction time.
    pub recency_window: Option<u64>,
    /// Minimum distance, in base buckets, from the current read position for a
    /// bucket to count as far. `None` uses twice the mean span of the current pass.
    pub distance_threshold: Option<i64>,
}

impl SchedulerConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            query_splits: DEFAULT_QUERY_SPLITS,
            recency_window: None,
            distance_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.query_splits == 0 {
            return Err(Error::param("query_splits must be at least 1"));
        }
        if matches!(self.distance_threshold, Some(d) if d < 0) {
            return Err(Error::param("distance_threshold must be non-negative"));
        }
        Ok(())
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self::new(Strategy::Mmlsh)
    }
}

// ---------------------------------------------------------------------------
// Demands and plans

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    pub projection: u32,
    pub bucket: i64,
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.projection, self.bucket)
    }
}

/// A non-empty base bucket some query point still has to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeededBucket {
    pub bucket: i64,
    /// Position in the projection's bucket directory.
    pub position: usize,
    pub entries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryNeed {
    pub query: usize,
    /// Ascending by bucket id, never empty.
    pub buckets: Vec<NeededBucket>,
}

/// All reads required by one (projection, level) pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepDemand {
    pub projection: usize,
    pub level: i64,
    pub needs: Vec<QueryNeed>,
}

impl StepDemand {
    pub fn is_empty(&self) -> bool {
        self.needs.is_empty()
    }

    fn mean_span(&self) -> f64 {
        if self.needs.is_empty() {
            return 1.0;
        }
        let total: f64 = self
            .needs
            .iter()
            .map(|n| (n.buckets[n.buckets.len() - 1].bucket as f64 - n.buckets[0].bucket as f64) + 1.0)
            .sum();
        total / self.needs.len() as f64
    }
}

/// A contiguous run of one query point's buckets, read in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub query: usize,
    pub buckets: Vec<NeededBucket>,
}

/// One bucket read once and shared by every query point that needs it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketBatch {
    pub bucket: NeededBucket,
    pub queries: Vec<usize>,
}

/// Query points in order of their leftmost bucket, each read to completion.
pub fn schedule_ns1(step: &StepDemand) -> Vec<Segment> {
    let mut segs: Vec<Segment> = step
        .needs
        .iter()
        .map(|n| Segment {
            query: n.query,
            buckets: n.buckets.clone(),
        })
        .collect();
    segs.sort_by_key(|s| (s.buckets[0].bucket, s.query));
    segs
}

/// Every needed bucket in ascending order, each read once.
pub fn schedule_ns2(step: &StepDemand) -> Vec<BucketBatch> {
    let mut by_bucket: BTreeMap<i64, BucketBatch> = BTreeMap::new();
    for need in &step.needs {
        for b in &need.buckets {
            by_bucket
                .entry(b.bucket)
                .or_insert_with(|| BucketBatch {
                    bucket: *b,
                    queries: Vec::new(),
                })
                .queries
                .push(need.query);
        }
    }
    by_bucket
        .into_values()
        .map(|mut batch| {
            batch.queries.sort_unstable();
            batch
        })
        .collect()
}

/// Cuts each query point's bucket list into up to `splits` contiguous pieces
/// and orders all pieces by their first bucket.
pub fn split_queries(step: &StepDemand, splits: usize) -> Vec<Segment> {
    let splits = splits.max(1);
    let mut keyed = Vec::new();
    for need in &step.needs {
        let len = need.buckets.len();
        let parts = splits.min(len);
        for s in 0..parts {
            let lo = s * len / parts;
            let hi = (s + 1) * len / parts;
            keyed.push((
                (need.buckets[lo].bucket, need.query, s),
                Segment {
                    query: need.query,
                    buckets: need.buckets[lo..hi].to_vec(),
                },
            ));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    keyed.into_iter().map(|(_, s)| s).collect()
}

// ---------------------------------------------------------------------------
// Buffer

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvictionPolicy {
    Lru,
    Mmlsh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BufferEntry {
    size: u64,
    inserted: u64,
    last_use: u64,
    est_frequency: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IoStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// Accesses to buckets too large to ever be resident.
    pub bypassed: u64,
    pub evictions: u64,
    pub bytes_read: u64,
    pub io_ms: f64,
}

impl IoStats {
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }

    fn minus(&self, before: &IoStats) -> IoStats {
        IoStats {
            accesses: self.accesses - before.accesses,
            hits: self.hits - before.hits,
            misses: self.misses - before.misses,
            bypassed: self.bypassed - before.bypassed,
            evictions: self.evictions - before.evictions,
            bytes_read: self.bytes_read - before.bytes_read,
            io_ms: self.io_ms - before.io_ms,
        }
    }
}

/// Where the reader currently is, used by the distance criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvictionContext {
    pub projection: u32,
    pub position: i64,
    pub level: i64,
    pub recency_window: Option<u64>,
    pub distance_threshold: i64,
}

impl EvictionContext {
    pub fn at(key: BucketKey) -> Self {
        Self {
            projection: key.projection,
            position: key.bucket,
            level: 1,
            recency_window: None,
            distance_threshold: 0,
        }
    }

    fn distance(&self, key: &BucketKey) -> u64 {
        if key.projection != self.projection {
            u64::MAX
        } else {
            key.bucket.abs_diff(self.position)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessOutcome {
    pub hit: bool,
    pub modeled_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: u64,
    pub key: BucketKey,
    pub level: i64,
    pub hit: bool,
    pub evicted: Vec<BucketKey>,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},",
            self.tick,
            self.key.projection,
            self.level,
            self.key.bucket,
            if self.hit { "hit" } else { "miss" }
        )?;
        for (i, k) in self.evicted.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BufferState {
    capacity: u64,
    used: u64,
    clock: u64,
    policy: EvictionPolicy,
    resident: HashMap<BucketKey, BufferEntry>,
    lru: BTreeMap<u64, BucketKey>,
    stats: IoStats,
    eviction_ops: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl BufferState {
    pub fn new(capacity_bytes: u64, policy: EvictionPolicy) -> Self {
        Self {
            capacity: capacity_bytes,
            used: 0,
            clock: 0,
            policy,
            resident: HashMap::new(),
            lru: BTreeMap::new(),
            stats: IoStats::default(),
            eviction_ops: 0,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    pub fn eviction_ops(&self) -> u64 {
        self.eviction_ops
    }

    pub fn resident_len(&self) -> usize {
        self.resident.len()
    }

    pub fn contains(&self, key: &BucketKey) -> bool {
        self.resident.contains_key(key)
    }

    /// Resident keys, sorted.
    pub fn resident_keys(&self) -> Vec<BucketKey> {
        let mut keys: Vec<_> = self.resident.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn est_frequency(&self, key: &BucketKey) -> Option<f64> {
        self.resident.get(key).map(|e| e.est_frequency)
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Reads `key`, from the buffer if resident, otherwise from disk.
    pub fn access(
        &mut self,
        key: BucketKey,
        size_bytes: u64,
        est_frequency: f64,
        ctx: &EvictionContext,
        cost: &CostModel,
    ) -> AccessOutcome {
        self.clock += 1;
        let tick = self.clock;
        self.stats.accesses += 1;
        let mut evicted = Vec::new();

        let hit = if let Some(e) = self.resident.get_mut(&key) {
            self.lru.remove(&e.last_use);
            e.last_use = tick;
            self.lru.insert(tick, key);
            true
        } else {
            false
        };

        let modeled_ms = if hit {
            self.stats.hits += 1;
            0.0
        } else {
            self.stats.misses += 1;
            self.stats.bytes_read += size_bytes;
            let ms = cost.read_ms(size_bytes);
            self.stats.io_ms += ms;
            if size_bytes > self.capacity {
                self.stats.bypassed += 1;
            } else {
                while self.used + size_bytes > self.capacity {
                    let victim = match self.policy {
                        EvictionPolicy::Lru => self.evict_lru(),
                        EvictionPolicy::Mmlsh => self.evict_mmlsh(ctx),
                    };
                    match victim {
                        Some(v) => evicted.push(v),
                        None => break,
                    }
                }
                self.resident.insert(
                    key,
                    BufferEntry {
                        size: size_bytes,
                        inserted: tick,
                        last_use: tick,
                        est_frequency,
                    },
                );
                self.lru.insert(tick, key);
                self.used += size_bytes;
            }
            ms
        };

        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord {
                tick,
                key,
                level: ctx.level,
                hit,
                evicted,
            });
        }
        AccessOutcome { hit, modeled_ms }
    }

    /// Marks one scheduled read of `key` as done.
    pub fn complete(&mut self, key: &BucketKey) {
        if let Some(e) = self.resident.get_mut(key) {
            e.est_frequency = (e.est_frequency - 1.0).max(0.0);
        }
    }

    fn remove(&mut self, key: &BucketKey) {
        if let Some(e) = self.resident.remove(key) {
            self.lru.remove(&e.last_use);
            self.used -= e.size;
            self.stats.evictions += 1;
        }
    }

    /// Evicts the least recently used bucket.
    pub fn evict_lru(&mut self) -> Option<BucketKey> {
        let (_, key) = self.lru.first_key_value().map(|(t, k)| (*t, *k))?;
        self.eviction_ops += 1;
        self.remove(&key);
        Some(key)
    }

    /// Picks the victim by recency, distance and estimated future use, relaxing
    /// the first two criteria when nothing passes them.
    pub fn mmlsh_victim(&self, ctx: &EvictionContext) -> Option<BucketKey> {
        let window = ctx.recency_window.unwrap_or(self.resident.len() as u64);
        let recent = |e: &BufferEntry| self.clock.saturating_sub(e.inserted) < window;
        let near = |k: &BucketKey| ctx.distance(k) <= ctx.distance_threshold as u64;
        let pick = |filter: &dyn Fn(&BucketKey, &BufferEntry) -> bool| {
            self.resident
                .iter()
                .filter(|(k, e)| filter(k, e))
                .min_by(|(ka, ea), (kb, eb)| {
                    ea.est_frequency
                        .total_cmp(&eb.est_frequency)
                        .then_with(|| ctx.distance(kb).cmp(&ctx.distance(ka)))
                        .then_with(|| ka.cmp(kb))
                })
                .map(|(k, _)| *k)
        };
        pick(&|k, e| !recent(e) && !near(k))
            .or_else(|| pick(&|_, e| !recent(e)))
            .or_else(|| pick(&|_, _| true))
    }

    pub fn evict_mmlsh(&mut self, ctx: &EvictionContext) -> Option<BucketKey> {
        self.eviction_ops += self.resident.len() as u64;
        let key = self.mmlsh_victim(ctx)?;
        self.remove(&key);
        Some(key)
    }
}

// ---------------------------------------------------------------------------
// Frequency profile

#[derive(Debug, Clone, PartialEq)]
struct ProjectionProfile {
    lo: i64,
    hi: i64,
    means: Vec<f64>,
}

impl ProjectionProfile {
    fn region_of(&self, bucket: i64) -> usize {
        let regions = self.means.len() as i128;
        let width = self.hi as i128 - self.lo as i128 + 1;
        let off = (bucket as i128 - self.lo as i128).clamp(0, width - 1);
        (off * regions / width) as usize
    }
}

/// Mean bucket access counts of random point queries, per projection region.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProfile {
    num_queries: usize,
    projections: Vec<ProjectionProfile>,
}

/// Point ids of `num_queries` profiling queries drawn uniformly, with replacement.
pub fn profile_sample(num_points: usize, num_queries: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_queries)
        .map(|_| rng.random_range(0..num_points as u32))
        .collect()
}

/// Profiles `num_queries` point queries drawn uniformly from the indexed points.
pub fn build_frequency_profile(
    index: &LshIndex,
    num_queries: usize,
    regions: usize,
    seed: u64,
) -> Result<FrequencyProfile> {
    if index.is_empty() {
        return Err(Error::param("cannot profile an empty index"));
    }
    let picks = profile_sample(index.len(), num_queries, seed);
    frequency_profile_from(index, &picks, regions)
}

/// Profiles the given indexed points, each standing for one point query whose
/// footprint is its own bucket in every projection.
pub fn frequency_profile_from(index: &LshIndex, picks: &[u32], regions: usize) -> Result<FrequencyProfile> {
    let num_queries = picks.len();
    if num_queries == 0 || regions == 0 {
        return Err(Error::param("profile needs at least one query and one region"));
    }
    let n = index.len();
    if let Some(&bad) = picks.iter().find(|&&p| p as usize >= n) {
        return Err(Error::param(format!("profile point {bad} is not indexed")));
    }
    let mut projections = Vec::with_capacity(index.num_projections());
    for table in index.tables() {
        // directory position of every point in this projection
        let mut pos_of = vec![0usize; n];
        for p in 0..table.num_buckets() {
            for e in table.bucket_entries(p) {
                pos_of[e.point as usize] = p;
            }
        }
        let mut hits = vec![0u64; table.num_buckets()];
        for &q in picks {
            hits[pos_of[q as usize]] += 1;
        }
        let (lo, hi) = table.occupied_range().expect("non-empty table");
        let mut prof = ProjectionProfile {
            lo,
            hi,
            means: vec![0.0; regions],
        };
        let mut sums = vec![0u64; regions];
        let mut occupied = vec![0u64; regions];
        for (p, &b) in table.buckets().iter().enumerate() {
            let r = prof.region_of(b);
            sums[r] += hits[p];
            occupied[r] += 1;
        }
        for r in 0..regions {
            if occupied[r] > 0 {
                prof.means[r] = sums[r] as f64 / occupied[r] as f64;
            }
        }
        projections.push(prof);
    }
    Ok(FrequencyProfile {
        num_queries,
        projections,
    })
}

impl FrequencyProfile {
    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_projections(&self) -> usize {
        self.projections.len()
    }

    pub fn num_regions(&self) -> usize {
        self.projections.first().map_or(0, |p| p.means.len())
    }

    /// Mean access count of the region holding `bucket`.
    pub fn region_mean(&self, projection: usize, bucket: i64) -> f64 {
        self.projections
            .get(projection)
            .map_or(0.0, |p| p.means[p.region_of(bucket)])
    }

    /// Expected number of reads of `bucket` by a query of `query_len` points.
    pub fn estimate(&self, projection: usize, bucket: i64, query_len: usize) -> f64 {
        self.region_mean(projection, bucket) * query_len as f64 / self.num_queries as f64
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "# mmlsh frequency profile v1 queries={} regions={}",
            self.num_queries,
            self.num_regions()
        )?;
        writeln!(out, "projection,lo,hi,region,mean")?;
        for (g, p) in self.projections.iter().enumerate() {
            for (r, m) in p.means.iter().enumerate() {
                writeln!(out, "{g},{},{},{r},{m:?}", p.lo, p.hi)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Report(format!("frequency profile: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header
            .strip_prefix("# mmlsh frequency profile v1 ")
            .ok_or_else(|| bad("missing header".into()))?;
        let mut num_queries = None;
        let mut regions = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("queries", v)) => num_queries = v.parse::<usize>().ok(),
                Some(("regions", v)) => regions = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let num_queries = num_queries.filter(|&q| q > 0).ok_or_else(|| bad("bad queries".into()))?;
        let regions = regions.filter(|&r| r > 0).ok_or_else(|| bad("bad regions".into()))?;
        if lines.next() != Some("projection,lo,hi,region,mean") {
            return Err(bad("missing column header".into()));
        }
        let mut projections: Vec<ProjectionProfile> = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = || bad(format!("line {}: `{line}`", i + 3));
            if f.len() != 5 {
                return Err(parse_err());
            }
            let g: usize = f[0].parse().map_err(|_| parse_err())?;
            let lo: i64 = f[1].parse().map_err(|_| parse_err())?;
            let hi: i64 = f[2].parse().map_err(|_| parse_err())?;
            let r: usize = f[3].parse().map_err(|_| parse_err())?;
            let m: f64 = f[4].parse().map_err(|_| parse_err())?;
            if lo > hi || r >= regions || !m.is_finite() || m < 0.0 {
                return Err(parse_err());
            }
            if g == projections.len() {
                projections.push(ProjectionProfile {
                    lo,
                    hi,
                    means: vec![0.0; regions],
                });
            } else if g + 1 != projections.len() {
                return Err(parse_err());
            }
            let p = projections.last_mut().expect("pushed above");
            if p.lo != lo || p.hi != hi {
                return Err(parse_err());
            }
            p.means[r] = m;
        }
        Ok(FrequencyProfile {
            num_queries,
            projections,
        })
    }
}

// ---------------------------------------------------------------------------
// Simulator

/// Operation counts accumulated by a simulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Collision counter increments.
    pub increments: u64,
    /// Scheduling and eviction bookkeeping.
    pub overhead: u64,
    /// Work done outside the buffer, such as Γ-distance verification.
    pub extra: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.increments + self.overhead + self.extra
    }
}

/// Modeled time and buffer statistics for a run or part of one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub io: IoStats,
    pub ops: OpCounts,
    pub alg_ms: f64,
    pub index_io_ms: f64,
    pub total_ms: f64,
}

/// Executes pass demands under one strategy against one buffer.
#[derive(Debug, Clone)]
pub struct Simulator<'p> {
    config: SchedulerConfig,
    cost: CostModel,
    alg: AlgCostModel,
    buffer: BufferState,
    profile: Option<&'p FrequencyProfile>,
    bucket_scale: u64,
    ops: OpCounts,
}

impl<'p> Simulator<'p> {
    pub fn new(config: SchedulerConfig, capacity_bytes: u64) -> Result<Self> {
        config.validate()?;
        let policy = match config.strategy {
            Strategy::Mmlsh => EvictionPolicy::Mmlsh,
            Strategy::Ns1 | Strategy::Ns2 => EvictionPolicy::Lru,
        };
        Ok(Self {
            config,
            cost: CostModel::default(),
            alg: AlgCostModel::default(),
            buffer: BufferState::new(capacity_bytes, policy),
            profile: None,
            bucket_scale: 1,
            ops: OpCounts::default(),
        })
    }

    pub fn with_costs(mut self, cost: CostModel, alg: AlgCostModel) -> Self {
        self.cost = cost;
        self.alg = alg;
        self
    }

    pub fn with_profile(mut self, profile: Option<&'p FrequencyProfile>) -> Self {
        self.profile = profile;
        self
    }

    /// Every real entry stands for `scale` modeled entries, both in bytes read
    /// and in collision increments.
    pub fn with_bucket_scale(mut self, scale: u64) -> Result<Self> {
        if scale == 0 {
            return Err(Error::param("bucket scale must be at least 1"));
        }
        self.bucket_scale = scale;
        Ok(self)
    }

    pub fn with_trace(mut self) -> Self {
        self.buffer = self.buffer.with_trace();
        self
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn buffer(&self) -> &BufferState {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut BufferState {
        &mut self.buffer
    }

    pub fn bucket_scale(&self) -> u64 {
        self.bucket_scale
    }

    pub fn add_extra_ops(&mut self, ops: u64) {
        self.ops.extra += ops;
    }

    pub fn stats(&self) -> RunStats {
        let io = *self.buffer.stats();
        let mut ops = self.ops;
        ops.overhead += self.buffer.eviction_ops();
        let alg_ms = self.alg.ms(ops.total());
        RunStats {
            io,
            ops,
            alg_ms,
            index_io_ms: io.io_ms,
            total_ms: alg_ms + io.io_ms,
        }
    }

    /// Stats accumulated since `before` was taken.
    pub fn stats_since(&self, before: &RunStats) -> RunStats {
        let now = self.stats();
        let ops = OpCounts {
            increments: now.ops.increments - before.ops.increments,
            overhead: now.ops.overhead - before.ops.overhead,
            extra: now.ops.extra - before.ops.extra,
        };
        let io = now.io.minus(&before.io);
        let alg_ms = self.alg.ms(ops.total());
        RunStats {
            io,
            ops,
            alg_ms,
            index_io_ms: io.io_ms,
            total_ms: alg_ms + io.io_ms,
        }
    }

    /// Reads every bucket of `step`, calling `serve(query, bucket)` once per
    /// (query point, bucket) pair in the strategy's order.
    pub fn run_step(
        &mut self,
        step: &StepDemand,
        query_len: usize,
        mut serve: impl FnMut(usize, &NeededBucket),
    ) {
        if step.is_empty() {
            return;
        }
        let projection = step.projection as u32;
        let threshold = self
            .config
            .distance_threshold
            .unwrap_or_else(|| (2.0 * step.mean_span()).ceil() as i64);
        let mut ctx = EvictionContext {
            projection,
            position: 0,
            level: step.level,
            recency_window: self.config.recency_window,
            distance_threshold: threshold,
        };
        match self.config.strategy {
            Strategy::Ns2 => {
                let batches = schedule_ns2(step);
                self.ops.overhead += batches.len() as u64 * (query_len as u64 + 1);
                for batch in &batches {
                    let key = self.read(&batch.bucket, projection, query_len, &mut ctx);
                    for &q in &batch.queries {
                        self.ops.increments += batch.bucket.entries as u64 * self.bucket_scale;
                        serve(q, &batch.bucket);
                        self.buffer.complete(&key);
                    }
                }
            }
            Strategy::Ns1 | Strategy::Mmlsh => {
                let segs = if self.config.strategy == Strategy::Ns1 {
                    schedule_ns1(step)
                } else {
                    split_queries(step, self.config.query_splits)
                };
                self.ops.overhead += segs.len() as u64;
                for seg in &segs {
                    for b in &seg.buckets {
                        let key = self.read(b, projection, query_len, &mut ctx);
                        self.ops.increments += b.entries as u64 * self.bucket_scale;
                        serve(seg.query, b);
                        self.buffer.complete(&key);
                    }
                }
            }
        }
    }

    fn read(
        &mut self,
        b: &NeededBucket,
        projection: u32,
        query_len: usize,
        ctx: &mut EvictionContext,
    ) -> BucketKey {
        let key = BucketKey {
            projection,
            bucket: b.bucket,
        };
        ctx.position = b.bucket;
        let est = self
            .profile
            .map_or(0.0, |p| p.estimate(projection as usize, b.bucket, query_len));
        let size = b.entries as u64 * ENTRY_BYTES * self.bucket_scale;
        self.buffer.access(key, size, est, ctx, &self.cost);
        key
    }
}

// ---------------------------------------------------------------------------
// Recorded workloads and strategy reports

/// The pass demands of one object query, replayable under any strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryWorkload {
    pub query_len: usize,
    pub steps: Vec<StepDemand>,
    pub extra_ops: u64,
}

/// Sum of the sizes of all distinct buckets touched by `workloads`.
pub fn working_set_bytes(workloads: &[QueryWorkload], bucket_scale: u64) -> u64 {
    let mut seen: HashMap<BucketKey, u64> = HashMap::new();
    for w in workloads {
        for s in &w.steps {
            for n in &s.needs {
                for b in &n.buckets {
                    seen.insert(
                        BucketKey {
                            projection: s.projection as u32,
                            bucket: b.bucket,
                        },
                        b.entries as u64,
                    );
                }
            }
        }
    }
    seen.values().sum::<u64>() * ENTRY_BYTES * bucket_scale
}

/// Runs `workloads` in order through `sim`, sharing its buffer.
pub fn replay(sim: &mut Simulator<'_>, workloads: &[QueryWorkload]) -> RunStats {
    let before = sim.stats();
    for w in workloads {
        for step in &w.steps {
            sim.run_step(step, w.query_len, |_, _| {});
        }
        sim.add_extra_ops(w.extra_ops);
    }
    sim.stats_since(&before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub buffer_bytes: u64,
    pub queries: usize,
    pub total_ms: f64,
    pub alg_ms: f64,
    pub index_io_ms: f64,
    pub hits: u64,
    pub misses: u64,
    pub bytes_read: u64,
}

impl StrategyRow {
    pub fn from_stats(strategy: Strategy, buffer_bytes: u64, queries: usize, s: &RunStats) -> Self {
        Self {
            strategy,
            buffer_bytes,
            queries,
            total_ms: s.total_ms,
            alg_ms: s.alg_ms,
            index_io_ms: s.index_io_ms,
            hits: s.io.hits,
            misses: s.io.misses,
            bytes_read: s.io.bytes_read,
        }
    }

    pub fn hit_rate(&self) -> f64 {
        let a = self.hits + self.misses;
        if a == 0 {
            0.0
        } else {
            self.hits as f64 / a as f64
        }
    }
}

/// Shared settings for replaying workloads under several strategies.
#[derive(Debug, Clone, Copy)]
pub struct ReplaySettings<'p> {
    pub cost: CostModel,
    pub alg: AlgCostModel,
    pub profile: Option<&'p FrequencyProfile>,
    pub bucket_scale: u64,
    pub query_splits: usize,
}

impl Default for ReplaySettings<'_> {
    fn default() -> Self {
        Self {
            cost: CostModel::default(),
            alg: AlgCostModel::default(),
            profile: None,
            bucket_scale: 1,
            query_splits: DEFAULT_QUERY_SPLITS,
        }
    }
}

/// Replays `workloads` once per (strategy, buffer size), each with a cold buffer.
pub fn run_strategy_report(
    workloads: &[QueryWorkload],
    strategies: &[Strategy],
    buffer_sizes: &[u64],
    settings: &ReplaySettings<'_>,
) -> Result<Vec<StrategyRow>> {
    let mut rows = Vec::new();
    for &cap in buffer_sizes {
        for &strategy in strategies {
            let mut cfg = SchedulerConfig::new(strategy);
            cfg.query_splits = settings.query_splits;
            let mut sim = Simulator::new(cfg, cap)?
                .with_costs(settings.cost, settings.alg)
                .with_profile(settings.profile)
                .with_bucket_scale(settings.bucket_scale)?;
            let s = replay(&mut sim, workloads);
            rows.push(StrategyRow::from_stats(strategy, cap, workloads.len(), &s));
        }
    }
    Ok(rows)
}

pub fn write_strategy_csv(rows: &[StrategyRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "buffer_mb",
        "queries",
        "total_ms",
        "alg_ms",
        "index_io_ms",
        "hits",
        "misses",
        "hit_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.name().to_string(),
            format!("{}", r.buffer_bytes as f64 / 1e6),
            r.queries.to_string(),
            format!("{:.3}", r.total_ms),
            format!("{:.3}", r.alg_ms),
            format!("{:.3}", r.index_io_ms),
            r.hits.to_string(),
            r.misses.to_string(),
            format!("{:.4}", r.hit_rate()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "tick,projection,level,bucket,outcome,evicted")?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}
