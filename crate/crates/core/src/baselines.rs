//! Exact ground truth and the point-level baselines with Borda aggregation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::buffer::{QueryNeed, RunStats, Simulator, StepDemand};
use crate::error::{Error, Result};
use crate::gamma::{euclidean, gamma_distance};
use crate::lsh::{level_bucket, level_range, LshIndex};
use crate::model::{Dataset, ObjectId, PointId, QueryObject};
use crate::query::{new_buckets, Neighbor};

/// The true top-k objects of `query` by Γ-distance, ties by object id.
pub fn exact_knn_objects(
    dataset: &Dataset,
    query: &QueryObject,
    k: usize,
    gamma: f64,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if query.dimension() != dataset.dimension() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dimension(),
            found: query.dimension(),
        });
    }
    let q = query.coords();
    let mut all = Vec::with_capacity(dataset.num_objects());
    for slot in 0..dataset.num_objects() {
        all.push(Neighbor {
            object_id: dataset.object(slot).object_id,
            gamma_distance: gamma_distance(&q, &dataset.object_coords(slot), gamma)?,
        });
    }
    all.sort_by(|a, b| {
        a.gamma_distance
            .total_cmp(&b.gamma_distance)
            .then(a.object_id.cmp(&b.object_id))
    });
    all.truncate(k);
    Ok(all)
}

/// Exact answers for a batch of query objects, keyed by query object id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub answers: BTreeMap<ObjectId, Vec<Neighbor>>,
}

impl GroundTruth {
    pub fn compute(dataset: &Dataset, queries: &[QueryObject], k: usize, gamma: f64) -> Result<Self> {
        let mut answers = BTreeMap::new();
        for q in queries {
            answers.insert(q.object_id, exact_knn_objects(dataset, q, k, gamma)?);
        }
        Ok(Self { answers })
    }

    pub fn get(&self, query_object_id: ObjectId) -> Option<&[Neighbor]> {
        self.answers.get(&query_object_id).map(Vec::as_slice)
    }

    /// CSV with columns `query_object_id,rank,object_id,gamma_distance`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["query_object_id", "rank", "object_id", "gamma_distance"])?;
        for (qid, list) in &self.answers {
            for (i, n) in list.iter().enumerate() {
                w.write_record([
                    qid.to_string(),
                    (i + 1).to_string(),
                    n.object_id.to_string(),
                    format!("{:?}", n.gamma_distance),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["query_object_id", "rank", "object_id", "gamma_distance"] {
            return Err(Error::Report(format!("unexpected ground-truth header {headers:?}")));
        }
        let mut answers: BTreeMap<ObjectId, Vec<Neighbor>> = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::Report(format!("ground-truth row {}: {:?}", i + 1, rec));
            let qid: ObjectId = rec[0].parse().map_err(|_| bad())?;
            let rank: usize = rec[1].parse().map_err(|_| bad())?;
            let oid: ObjectId = rec[2].parse().map_err(|_| bad())?;
            let d: f64 = rec[3].parse().map_err(|_| bad())?;
            let list = answers.entry(qid).or_default();
            if rank != list.len() + 1 {
                return Err(bad());
            }
            list.push(Neighbor {
                object_id: oid,
                gamma_distance: d,
            });
        }
        Ok(Self { answers })
    }
}

/// A point neighbour and its Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointNeighbor {
    pub point_id: PointId,
    pub distance: f64,
}

fn sort_points(v: &mut [PointNeighbor]) {
    v.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.point_id.cmp(&b.point_id)));
}

/// Exact k′ nearest points by linear scan, ties by point id.
pub fn point_knn_linear(dataset: &Dataset, point: &[f32], k: usize) -> Vec<PointNeighbor> {
    let mut all: Vec<PointNeighbor> = dataset
        .points()
        .iter()
        .map(|p| PointNeighbor {
            point_id: p.point_id,
            distance: euclidean(point, &p.coords),
        })
        .collect();
    sort_points(&mut all);
    all.truncate(k);
    all
}

/// Point-level collision counting with virtual rehashing.
///
/// Stops once `k + beta_point * n` points have reached `l` collisions, or
/// once `k` of them lie within `c * R`.
pub fn point_knn_c2lsh(
    index: &LshIndex,
    dataset: &Dataset,
    point: &[f32],
    k: usize,
    beta_point: f64,
    sim: &mut Simulator<'_>,
) -> Result<Vec<PointNeighbor>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if point.len() != index.dimension() {
        return Err(Error::DimensionMismatch {
            expected: index.dimension(),
            found: point.len(),
        });
    }
    let n = dataset.len();
    let m = index.num_projections();
    let l = index.params().l as u32;
    let c = index.params().c as i64;
    let base = index.hash_all(point);
    let mut counted = vec![(1i64, 0i64); m];
    let mut counts = vec![0u32; n];
    let mut cand: Vec<PointNeighbor> = Vec::new();
    let t1 = k as f64 + beta_point * n as f64;
    let mut level = 1i64;
    loop {
        for g in 0..m {
            let (lo, hi) = level_range(level_bucket(base[g], level), level);
            let buckets = new_buckets(index.table(g), lo, hi, &mut counted[g]);
            if buckets.is_empty() {
                continue;
            }
            let step = StepDemand {
                projection: g,
                level,
                needs: vec![QueryNeed { query: 0, buckets }],
            };
            let table = index.table(g);
            sim.run_step(&step, 1, |_, b| {
                for e in table.bucket_entries(b.position) {
                    let cnt = &mut counts[e.point as usize];
                    *cnt += 1;
                    if *cnt == l {
                        cand.push(PointNeighbor {
                            point_id: e.point,
                            distance: euclidean(point, dataset.point(e.point)),
                        });
                    }
                }
            });
            if cand.len() as f64 >= t1 {
                sort_points(&mut cand);
                cand.truncate(k);
                return Ok(cand);
            }
        }
        let c_r = (c * level) as f64;
        let exhausted = (0..m).all(|g| match index.table(g).occupied_range() {
            None => true,
            Some((lo, hi)) => counted[g].0 <= lo && counted[g].1 >= hi,
        });
        if cand.iter().filter(|p| p.distance <= c_r).count() >= k || (exhausted && cand.len() < k) {
            break;
        }
        match level.checked_mul(c) {
            Some(next) => level = next,
            None => break,
        }
    }
    sort_points(&mut cand);
    cand.truncate(k);
    Ok(cand)
}

/// Default point-level false-positive allowance, 100 / n.
pub fn default_beta_point(n: usize) -> f64 {
    (100.0 / n.max(1) as f64).min(1.0)
}

/// Sums rank scores per object: a point at rank r of a k′-list scores k′ − r + 1.
/// Returns the `k` best objects, ties by object id; objects never ranked score 0.
pub fn borda_aggregate(
    dataset: &Dataset,
    per_point: &[Vec<PointNeighbor>],
    k_prime: usize,
    k: usize,
) -> Vec<(ObjectId, u64)> {
    let mut score = vec![0u64; dataset.num_objects()];
    for list in per_point {
        for (r, p) in list.iter().take(k_prime).enumerate() {
            score[dataset.slot_of_point(p.point_id)] += (k_prime - r) as u64;
        }
    }
    let mut ranked: Vec<(ObjectId, u64)> = (0..dataset.num_objects())
        .map(|s| (dataset.object(s).object_id, score[s]))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointMethod {
    Linear,
    C2lsh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BordaConfig {
    pub k: usize,
    pub k_prime: usize,
    pub method: PointMethod,
    pub beta_point: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BordaResult {
    pub objects: Vec<(ObjectId, u64)>,
    pub stats: RunStats,
}

/// Object k-NN by running one point query per query point and aggregating.
pub fn borda_knn_objects(
    index: Option<&LshIndex>,
    dataset: &Dataset,
    query: &QueryObject,
    cfg: &BordaConfig,
    sim: &mut Simulator<'_>,
) -> Result<BordaResult> {
    if cfg.k == 0 || cfg.k_prime == 0 {
        return Err(Error::param("k and k' must be at least 1"));
    }
    let before = sim.stats();
    let mut lists = Vec::with_capacity(query.len());
    for p in &query.points {
        let list = match cfg.method {
            PointMethod::Linear => {
                if p.len() != dataset.dimension() {
                    return Err(Error::DimensionMismatch {
                        expected: dataset.dimension(),
                        found: p.len(),
                    });
                }
                sim.add_extra_ops((dataset.len() * dataset.dimension()) as u64);
                point_knn_linear(dataset, p, cfg.k_prime)
            }
            PointMethod::C2lsh => {
                let index = index.ok_or_else(|| Error::param("C2LSH baseline needs an index"))?;
                point_knn_c2lsh(index, dataset, p, cfg.k_prime, cfg.beta_point, sim)?
            }
        };
        lists.push(list);
    }
    Ok(BordaResult {
        objects: borda_aggregate(dataset, &lists, cfg.k_prime, cfg.k),
        stats: sim.stats_since(&before),
    })
}
