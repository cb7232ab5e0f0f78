//! Euclidean LSH: the `floor((a.x + b) / w)` hash family, parameter
//! derivation for collision counting, index construction and persistence.
//!
//! Each projection keeps a flat array of `(base bucket, point id)` pairs
//! sorted by bucket, plus a directory of distinct non-empty buckets. A bucket
//! at level `R` is the union of base buckets `b` with `floor(b / R)` equal,
//! so every level-`R` bucket is a contiguous run of the sorted array.
//!
//! Projection `g` draws its hash function from a ChaCha8 stream seeded with
//! the index seed and stream number `g`, so indexes are reproducible across
//! platforms and projections can be generated independently.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{Dataset, PointId};

/// Default bucket width.
pub const DEFAULT_W: f64 = 2.184;
/// Default approximation ratio.
pub const DEFAULT_C: u32 = 2;

/// Probability that two points at distance `s` share a bucket of width `w`
/// under one random projection.
pub fn collision_probability(s: f64, w: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let t = w / s;
    let phi_neg = 0.5 * erfc(t / std::f64::consts::SQRT_2);
    1.0 - 2.0 * phi_neg - 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * t) * (1.0 - (-t * t / 2.0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LshParams {
    pub c: u32,
    pub w: f64,
    pub delta: f64,
    pub beta: f64,
    pub p1: f64,
    pub p2: f64,
    pub z: f64,
    pub alpha: f64,
    /// Number of projections.
    pub m: usize,
    /// Collision threshold.
    pub l: usize,
}

/// `z = sqrt(ln(2/β) / ln(1/δ))`.
pub fn threshold_z(delta: f64, beta: f64) -> f64 {
    ((2.0 / beta).ln() / (1.0 / delta).ln()).sqrt()
}

/// Derives `p1`, `p2`, `m` and `l` for collision counting.
pub fn derive_params(delta: f64, beta: f64, c: u32, w: f64) -> Result<LshParams> {
    if !(delta > 0.0 && delta < 1.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("delta and beta must lie in (0, 1)"));
    }
    if c < 2 {
        return Err(Error::param(format!("approximation ratio c must be an integer >= 2, got {c}")));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::param(format!("bucket width must be positive, got {w}")));
    }
    let p1 = collision_probability(1.0, w);
    let p2 = collision_probability(c as f64, w);
    if p1 <= p2 {
        return Err(Error::param(format!("degenerate hash family: p1 = {p1} <= p2 = {p2}")));
    }
    let z = threshold_z(delta, beta);
    let m = ((1.0 / delta).ln() / (2.0 * (p1 - p2).powi(2)) * (1.0 + z).powi(2)).ceil() as usize;
    let alpha = (z * p1 + p2) / (1.0 + z);
    let l = (alpha * m as f64).ceil() as usize;
    Ok(LshParams {
        c,
        w,
        delta,
        beta,
        p1,
        p2,
        z,
        alpha,
        m: m.max(1),
        l: l.clamp(1, m.max(1)),
    })
}

impl LshParams {
    /// Replaces the derived projection count and collision threshold.
    pub fn with_projections(mut self, m: usize, l: usize) -> Result<Self> {
        if m == 0 || l == 0 || l > m {
            return Err(Error::param(format!("need 1 <= l <= m, got m = {m}, l = {l}")));
        }
        self.m = m;
        self.l = l;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFunction {
    pub a: Vec<f64>,
    pub b: f64,
    pub w: f64,
}

impl HashFunction {
    pub fn sample(rng: &mut impl Rng, dimension: usize, w: f64) -> Self {
        let a = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
        let b = rng.random_range(0.0..w);
        Self { a, b, w }
    }

    pub fn project(&self, x: &[f32]) -> f64 {
        self.a.iter().zip(x).map(|(&a, &v)| a * v as f64).sum::<f64>()
    }

    /// Base bucket `floor((a.x + b) / w)`.
    pub fn hash(&self, x: &[f32]) -> i64 {
        ((self.project(x) + self.b) / self.w).floor() as i64
    }
}

pub fn hash_point(f: &HashFunction, x: &[f32]) -> Result<i64> {
    if f.a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: f.a.len(),
            found: x.len(),
        });
    }
    Ok(f.hash(x))
}

/// Level-`level` bucket containing base bucket `base`.
#[inline]
pub fn level_bucket(base: i64, level: i64) -> i64 {
    base.div_euclid(level)
}

/// Inclusive range of base buckets forming level bucket `id` at `level`.
#[inline]
pub fn level_range(id: i64, level: i64) -> (i64, i64) {
    let lo = (id as i128 * level as i128).clamp(i64::MIN as i128, i64::MAX as i128);
    let hi = (lo + level as i128 - 1).clamp(i64::MIN as i128, i64::MAX as i128);
    (lo as i64, hi as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketEntry {
    pub bucket: i64,
    pub point: PointId,
}

/// One projection's sorted table and bucket directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    entries: Vec<BucketEntry>,
    /// Distinct buckets, ascending.
    buckets: Vec<i64>,
    /// `starts[i]..starts[i + 1]` are the entries of `buckets[i]`.
    starts: Vec<u32>,
}

impl ProjectionTable {
    fn from_entries(mut entries: Vec<BucketEntry>) -> Self {
        entries.sort_unstable_by_key(|e| (e.bucket, e.point));
        let mut buckets = Vec::new();
        let mut starts = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if buckets.last() != Some(&e.bucket) {
                buckets.push(e.bucket);
                starts.push(i as u32);
            }
        }
        starts.push(entries.len() as u32);
        Self {
            entries,
            buckets,
            starts,
        }
    }

    pub fn entries(&self) -> &[BucketEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct non-empty buckets in ascending order.
    pub fn buckets(&self) -> &[i64] {
        &self.buckets
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// Directory positions of the non-empty buckets in `[lo, hi]`.
    pub fn bucket_positions(&self, lo: i64, hi: i64) -> Range<usize> {
        if lo > hi {
            return 0..0;
        }
        let start = self.buckets.partition_point(|&b| b < lo);
        let end = self.buckets.partition_point(|&b| b <= hi);
        start..end
    }

    /// Entries of the bucket at directory position `pos`.
    pub fn bucket_entries(&self, pos: usize) -> &[BucketEntry] {
        &self.entries[self.starts[pos] as usize..self.starts[pos + 1] as usize]
    }

    pub fn bucket_len(&self, pos: usize) -> usize {
        (self.starts[pos + 1] - self.starts[pos]) as usize
    }

    /// Directory position of `bucket`, if it is non-empty.
    pub fn position_of(&self, bucket: i64) -> Option<usize> {
        self.buckets.binary_search(&bucket).ok()
    }

    /// Lowest and highest occupied base bucket.
    pub fn occupied_range(&self) -> Option<(i64, i64)> {
        Some((*self.buckets.first()?, *self.buckets.last()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    params: LshParams,
    dimension: usize,
    seed: u64,
    functions: Vec<HashFunction>,
    tables: Vec<ProjectionTable>,
}

/// Hash functions for an index with this seed, one ChaCha8 stream each.
pub fn hash_functions(params: &LshParams, dimension: usize, seed: u64) -> Vec<HashFunction> {
    (0..params.m)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64);
            HashFunction::sample(&mut rng, dimension, params.w)
        })
        .collect()
}

pub fn build_index(data: &Dataset, params: &LshParams, seed: u64) -> Result<LshIndex> {
    if data.is_empty() {
        return Err(Error::param("cannot index an empty dataset"));
    }
    let functions = hash_functions(params, data.dimension(), seed);
    let tables = functions
        .iter()
        .map(|f| {
            ProjectionTable::from_entries(
                data.points()
                    .iter()
                    .map(|p| BucketEntry {
                        bucket: f.hash(&p.coords),
                        point: p.point_id,
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(LshIndex {
        params: *params,
        dimension: data.dimension(),
        seed,
        functions,
        tables,
    })
}

impl LshIndex {
    pub fn params(&self) -> &LshParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_projections(&self) -> usize {
        self.functions.len()
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.tables.first().map_or(0, ProjectionTable::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn functions(&self) -> &[HashFunction] {
        &self.functions
    }

    pub fn function(&self, g: usize) -> &HashFunction {
        &self.functions[g]
    }

    pub fn tables(&self) -> &[ProjectionTable] {
        &self.tables
    }

    pub fn table(&self, g: usize) -> &ProjectionTable {
        &self.tables[g]
    }

    /// Base buckets of `x` in every projection.
    pub fn hash_all(&self, x: &[f32]) -> Vec<i64> {
        self.functions.iter().map(|f| f.hash(x)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let p = &self.params;
        out.extend_from_slice(&p.c.to_le_bytes());
        for v in [p.w, p.delta, p.beta, p.p1, p.p2, p.z, p.alpha] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(p.m as u64).to_le_bytes());
        out.extend_from_slice(&(p.l as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u64).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (f, t) in self.functions.iter().zip(&self.tables) {
            for a in &f.a {
                out.extend_from_slice(&a.to_le_bytes());
            }
            out.extend_from_slice(&f.b.to_le_bytes());
            for e in &t.entries {
                out.extend_from_slice(&e.bucket.to_le_bytes());
                out.extend_from_slice(&e.point.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::IndexLoad(msg.to_string());
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not an index file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::IndexLoad(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch (file truncated or corrupted)"));
        }
        let mut r = Reader {
            buf: body,
            pos: 12,
        };
        let c = r.u32()?;
        let [w, delta, beta, p1, p2, z, alpha] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let m = r.u64()? as usize;
        let l = r.u64()? as usize;
        let seed = r.u64()?;
        let dimension = r.u64()? as usize;
        let n = r.u64()? as usize;
        let params = LshParams {
            c,
            w,
            delta,
            beta,
            p1,
            p2,
            z,
            alpha,
            m,
            l,
        };
        let mut functions = Vec::with_capacity(m);
        let mut tables = Vec::with_capacity(m);
        for _ in 0..m {
            let a = (0..dimension).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let b = r.f64()?;
            functions.push(HashFunction { a, b, w });
            let entries = (0..n)
                .map(|_| {
                    Ok(BucketEntry {
                        bucket: r.i64()?,
                        point: r.u32()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if entries.windows(2).any(|p| (p[0].bucket, p[0].point) > (p[1].bucket, p[1].point)) {
                return Err(bad("projection table is not sorted"));
            }
            tables.push(ProjectionTable::from_entries(entries));
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the last projection"));
        }
        Ok(Self {
            params,
            dimension,
            seed,
            functions,
            tables,
        })
    }
}

const MAGIC: &[u8; 8] = b"MMLSHIDX";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::IndexLoad("unexpected end of index data".into()))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synth_dataset;

    #[test]
    fn probability_limits_and_order() {
        assert_eq!(collision_probability(0.0, DEFAULT_W), 1.0);
        assert!((collision_probability(1e-6, DEFAULT_W) - 1.0).abs() < 1e-5);
        assert!(collision_probability(1.0, DEFAULT_W) > collision_probability(2.0, DEFAULT_W));
        let mut prev = 1.0;
        for i in 1..200 {
            let p = collision_probability(i as f64 * 0.05, DEFAULT_W);
            assert!(p < prev && p > 0.0);
            prev = p;
        }
    }

    #[test]
    fn m_uses_ln_inverse_delta_and_grows_as_delta_shrinks() {
        assert!(((1.0f64 / 0.1).ln() - std::f64::consts::LN_10).abs() < 1e-15);
        let mut prev = 0;
        for delta in [0.5, 0.3, 0.1, 0.05, 0.01, 0.001] {
            let p = derive_params(delta, 0.0125, 2, DEFAULT_W).unwrap();
            assert!(p.m > prev, "delta {delta}");
            prev = p.m;
        }
    }

    #[test]
    fn threshold_separates_populations() {
        for delta in [0.05, 0.1, 0.2] {
            for beta in [0.001, 0.0125, 0.125, 0.5] {
                for c in [2, 3, 4] {
                    let p = derive_params(delta, beta, c, DEFAULT_W).unwrap();
                    assert!(p.l <= p.m);
                    let (l, m) = (p.l as f64, p.m as f64);
                    assert!(p.p2 * m < l && l < p.p1 * m, "{p:?}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(derive_params(0.0, 0.1, 2, DEFAULT_W).is_err());
        assert!(derive_params(0.1, 1.0, 2, DEFAULT_W).is_err());
        assert!(derive_params(0.1, 0.1, 1, DEFAULT_W).is_err());
        assert!(derive_params(0.1, 0.1, 2, 0.0).is_err());
        let p = derive_params(0.1, 0.1, 2, DEFAULT_W).unwrap();
        assert!(p.with_projections(3, 4).is_err());
        assert_eq!(p.with_projections(4, 3).unwrap().m, 4);
    }

    #[test]
    fn hash_examples() {
        let f = HashFunction {
            a: vec![1.0, 0.0],
            b: 0.5,
            w: 2.184,
        };
        assert_eq!(hash_point(&f, &[3.0, 9.9]).unwrap(), 1);
        let g = HashFunction {
            a: vec![1.0],
            b: 0.0,
            w: 1.0,
        };
        assert_eq!(hash_point(&g, &[-0.1]).unwrap(), -1);
        assert!(hash_point(&g, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hash_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f = HashFunction::sample(&mut rng, 8, DEFAULT_W);
        for _ in 0..1000 {
            let x: Vec<f32> = (0..8).map(|_| rng.random_range(-10.0f32..10.0)).collect();
            let mut dot = f.b;
            for (a, v) in f.a.iter().zip(&x) {
                dot += a * *v as f64;
            }
            let q = dot / f.w;
            let mut want = q as i64;
            if (want as f64) > q {
                want -= 1;
            }
            assert_eq!(f.hash(&x), want);
        }
    }

    #[test]
    fn translation_by_one_bucket() {
        let f = HashFunction {
            a: vec![0.6, 0.8],
            b: 0.3,
            w: 2.0,
        };
        // a.x + b = 1.3, well inside bucket 0
        let x = [1.0f32, 0.0];
        let shift: Vec<f32> = f.a.iter().map(|&a| (a * f.w) as f32).collect(); // |a| = 1
        let y: Vec<f32> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        assert_eq!(f.hash(&y), f.hash(&x) + 1);
    }

    #[test]
    fn level_arithmetic() {
        assert_eq!(level_bucket(-1, 2), -1);
        assert_eq!(level_bucket(-2, 2), -1);
        assert_eq!(level_bucket(-3, 2), -2);
        assert_eq!(level_bucket(5, 4), 1);
        assert_eq!(level_range(-1, 4), (-4, -1));
        assert_eq!(level_range(1, 4), (4, 7));
        for b in -50..50 {
            for r in [1i64, 2, 4, 8, 27] {
                let (lo, hi) = level_range(level_bucket(b, r), r);
                assert!(lo <= b && b <= hi && hi - lo + 1 == r);
            }
        }
    }

    #[test]
    fn single_point_index() {
        let ds = synth_dataset(1, 1, 3, 0.1, 1).unwrap();
        let p = derive_params(0.1, 0.1, 2, DEFAULT_W).unwrap().with_projections(3, 2).unwrap();
        let idx = build_index(&ds, &p, 5).unwrap();
        assert_eq!(idx.tables().len(), 3);
        assert!(idx.tables().iter().all(|t| t.len() == 1 && t.num_buckets() == 1));
    }

    #[test]
    fn index_is_sorted_complete_and_rehashable() {
        let ds = synth_dataset(20, 5, 6, 0.3, 2).unwrap();
        let p = derive_params(0.1, 0.1, 2, DEFAULT_W).unwrap().with_projections(12, 7).unwrap();
        let idx = build_index(&ds, &p, 9).unwrap();
        assert_eq!(idx, build_index(&ds, &p, 9).unwrap());
        assert_ne!(idx, build_index(&ds, &p, 10).unwrap());
        for (g, t) in idx.tables().iter().enumerate() {
            let mut seen = vec![false; ds.len()];
            for w in t.entries().windows(2) {
                assert!(w[0].bucket <= w[1].bucket);
            }
            for e in t.entries() {
                assert!(!seen[e.point as usize]);
                seen[e.point as usize] = true;
                assert_eq!(e.bucket, hash_point(idx.function(g), ds.point(e.point)).unwrap());
            }
            assert!(seen.into_iter().all(|s| s));
            let total: usize = (0..t.num_buckets()).map(|i| t.bucket_len(i)).sum();
            assert_eq!(total, ds.len());
        }
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let ds = synth_dataset(5, 4, 3, 0.2, 3).unwrap();
        let p = derive_params(0.1, 0.1, 2, DEFAULT_W).unwrap().with_projections(4, 3).unwrap();
        let idx = build_index(&ds, &p, 1).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(LshIndex::from_bytes(&bytes).unwrap(), idx);

        let truncated = &bytes[..bytes.len() - 10];
        assert!(matches!(LshIndex::from_bytes(truncated), Err(Error::IndexLoad(m)) if m.contains("checksum")));

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(LshIndex::from_bytes(&flipped), Err(Error::IndexLoad(m)) if m.contains("checksum")));

        let mut versioned = bytes.clone();
        versioned[8] = 9;
        assert!(matches!(LshIndex::from_bytes(&versioned), Err(Error::IndexLoad(m)) if m.contains("version")));
    }
}
