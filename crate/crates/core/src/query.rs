//! Object-level k-NN search by collision counting with virtual rehashing.

use serde::{Deserialize, Serialize};

use crate::buffer::{NeededBucket, QueryNeed, QueryWorkload, RunStats, Simulator, StepDemand};
use crate::error::{Error, Result};
use crate::gamma::{collision_index_from_count, gamma_distance, GammaParams};
use crate::lsh::{level_bucket, level_range, LshIndex, ProjectionTable};
use crate::model::{Dataset, ObjectId, QueryObject};

/// Smallest Γ for which the collision-index estimate is reliable.
pub fn gamma_min_bound(
    query_len: usize,
    object_len: usize,
    delta: f64,
    epsilon: f64,
    beta: f64,
) -> Result<f64> {
    if query_len == 0 || object_len == 0 {
        return Err(Error::param("query and object sizes must be positive"));
    }
    if !(epsilon > delta) || !(delta > 0.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("need 0 < delta < epsilon and 0 < beta < 1"));
    }
    let pairs = (query_len * object_len) as f64;
    let a = (1.0 / delta).ln() / ((epsilon - delta).powi(2) * pairs);
    let b = 2.0 * (2.0 / beta).ln() / (beta * beta * pairs);
    Ok(a.max(b).sqrt())
}

/// Base buckets of `[lo, hi]` outside the already-counted `counted` range,
/// which must be nested inside it. Updates `counted`.
pub(crate) fn new_buckets(
    table: &ProjectionTable,
    lo: i64,
    hi: i64,
    counted: &mut (i64, i64),
) -> Vec<NeededBucket> {
    let (clo, chi) = *counted;
    let parts: [(i64, i64); 2] = if clo > chi {
        [(lo, hi), (1, 0)]
    } else {
        [(lo, clo.saturating_sub(1)), (chi.saturating_add(1), hi)]
    };
    *counted = (lo, hi);
    let mut out = Vec::new();
    for (a, b) in parts {
        if a > b {
            continue;
        }
        for pos in table.bucket_positions(a, b) {
            out.push(NeededBucket {
                bucket: table.buckets()[pos],
                position: pos,
                entries: table.bucket_len(pos) as u32,
            });
        }
    }
    out
}

/// Per-query collision counters and the candidate list.
#[derive(Debug, Clone)]
pub struct CollisionState<'a> {
    index: &'a LshIndex,
    dataset: &'a Dataset,
    query_len: usize,
    l: u16,
    candidate_threshold: f64,
    /// Base bucket of query point `q` in projection `g`, at `q * m + g`.
    query_buckets: Vec<i64>,
    /// Base-bucket range already counted for `(q, g)`; empty when `lo > hi`.
    counted: Vec<(i64, i64)>,
    /// Collision count of `(q, point)`, at `q * n + point`.
    counts: Vec<u16>,
    qualifying: Vec<u32>,
    in_cl: Vec<bool>,
    cl: Vec<usize>,
}

impl<'a> CollisionState<'a> {
    pub fn new(
        index: &'a LshIndex,
        dataset: &'a Dataset,
        query: &QueryObject,
        gamma: &GammaParams,
    ) -> Result<Self> {
        if index.len() != dataset.len() {
            return Err(Error::param(format!(
                "index holds {} points but dataset has {}",
                index.len(),
                dataset.len()
            )));
        }
        if query.is_empty() {
            return Err(Error::param("query object has no points"));
        }
        if query.dimension() != index.dimension() {
            return Err(Error::DimensionMismatch {
                expected: index.dimension(),
                found: query.dimension(),
            });
        }
        let m = index.num_projections();
        let l = u16::try_from(index.params().l)
            .map_err(|_| Error::param("collision threshold l exceeds 65535"))?;
        let mut query_buckets = Vec::with_capacity(query.len() * m);
        for p in &query.points {
            query_buckets.extend(index.hash_all(p));
        }
        Ok(Self {
            index,
            dataset,
            query_len: query.len(),
            l,
            candidate_threshold: gamma.candidate_threshold(),
            query_buckets,
            counted: vec![(1, 0); query.len() * m],
            counts: vec![0; query.len() * dataset.len()],
            qualifying: vec![0; dataset.num_objects()],
            in_cl: vec![false; dataset.num_objects()],
            cl: Vec::new(),
        })
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    /// Reads still needed by every query point for projection `g` at `level`.
    /// Marks them as counted.
    pub fn demand(&mut self, g: usize, level: i64) -> StepDemand {
        let m = self.index.num_projections();
        let table = self.index.table(g);
        let mut needs = Vec::new();
        for q in 0..self.query_len {
            let id = level_bucket(self.query_buckets[q * m + g], level);
            let (lo, hi) = level_range(id, level);
            let buckets = new_buckets(table, lo, hi, &mut self.counted[q * m + g]);
            if !buckets.is_empty() {
                needs.push(QueryNeed { query: q, buckets });
            }
        }
        StepDemand {
            projection: g,
            level,
            needs,
        }
    }

    /// Counts one collision for every point in the bucket at directory `pos`.
    pub fn count_bucket(&mut self, q: usize, g: usize, pos: usize) {
        let n = self.dataset.len();
        let row = &mut self.counts[q * n..(q + 1) * n];
        for e in self.index.table(g).bucket_entries(pos) {
            let c = &mut row[e.point as usize];
            *c += 1;
            if *c == self.l {
                let slot = self.dataset.slot_of_point(e.point);
                self.qualifying[slot] += 1;
                let ci = collision_index_from_count(
                    self.qualifying[slot] as usize,
                    self.query_len,
                    self.dataset.object(slot).len(),
                );
                if !self.in_cl[slot] && ci >= self.candidate_threshold {
                    self.in_cl[slot] = true;
                    self.cl.push(slot);
                }
            }
        }
    }

    /// Runs one (projection, level) pass through `sim`.
    pub fn count_projection(&mut self, g: usize, level: i64, sim: &mut Simulator<'_>) -> StepDemand {
        let step = self.demand(g, level);
        let qlen = self.query_len;
        sim.run_step(&step, qlen, |q, b| self.count_bucket(q, g, b.position));
        step
    }

    pub fn count(&self, q: usize, point: u32) -> u32 {
        self.counts[q * self.dataset.len() + point as usize] as u32
    }

    pub fn collision_index(&self, slot: usize) -> f64 {
        collision_index_from_count(
            self.qualifying[slot] as usize,
            self.query_len,
            self.dataset.object(slot).len(),
        )
    }

    /// Candidate slots in the order they qualified.
    pub fn candidates(&self) -> &[usize] {
        &self.cl
    }

    /// Base-bucket range counted so far for `(q, g)`, if any.
    pub fn counted_range(&self, q: usize, g: usize) -> Option<(i64, i64)> {
        let r = self.counted[q * self.index.num_projections() + g];
        (r.0 <= r.1).then_some(r)
    }

    /// True once every query point has counted every occupied bucket.
    pub fn exhausted(&self) -> bool {
        let m = self.index.num_projections();
        (0..m).all(|g| match self.index.table(g).occupied_range() {
            None => true,
            Some((lo, hi)) => (0..self.query_len).all(|q| {
                let (a, b) = self.counted[q * m + g];
                a <= lo && b >= hi
            }),
        })
    }
}

/// Whether the candidate list is large enough to stop.
pub fn check_t1(candidates: usize, k: usize, beta: f64, num_objects: usize) -> bool {
    candidates as f64 >= k as f64 + beta * num_objects as f64
}

/// Whether at least `k` candidates lie within Γ-distance `c_r`.
pub fn check_t2(gamma_distances: &[f64], k: usize, c_r: f64) -> bool {
    gamma_distances.iter().filter(|&&d| d <= c_r).count() >= k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Enough candidates collected.
    T1,
    /// k candidates verified within c·R.
    T2,
    /// The index ran out of buckets before either condition held.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub object_id: ObjectId,
    pub gamma_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub gamma: GammaParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_object_id: ObjectId,
    /// Ascending Γ-distance, ties by object id.
    pub neighbors: Vec<Neighbor>,
    pub stop: StopReason,
    /// False when fewer than k objects could be returned.
    pub complete: bool,
    pub levels: u32,
    pub final_level: i64,
    pub candidates: usize,
    pub gamma_evaluations: usize,
    pub gamma_bound: f64,
    pub bound_violated: bool,
    pub stats: RunStats,
    pub workload: QueryWorkload,
}

/// Answers a top-k object query, reading buckets through `sim`.
pub fn knn_objects(
    index: &LshIndex,
    dataset: &Dataset,
    query: &QueryObject,
    cfg: &SearchConfig,
    sim: &mut Simulator<'_>,
) -> Result<QueryResult> {
    if cfg.k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    cfg.gamma.validate()?;
    let g = &cfg.gamma;
    let bound = gamma_min_bound(query.len(), dataset.min_object_size(), g.delta, g.epsilon, g.beta)?;
    let bound_violated = g.gamma < bound;
    if bound_violated {
        log::warn!(
            "gamma {} is below the reliability bound {:.4} for |Q| = {}",
            g.gamma,
            bound,
            query.len()
        );
    }

    let mut state = CollisionState::new(index, dataset, query, g)?;
    let before = sim.stats();
    let m = index.num_projections();
    let c = index.params().c as i64;
    let qcoords = query.coords();
    let mut gdist: Vec<Option<f64>> = vec![None; dataset.num_objects()];
    let mut evaluations = 0usize;
    let mut steps = Vec::new();
    let mut verify_ops = 0u64;
    let mut level = 1i64;
    let mut levels = 0u32;

    let stop = 'search: loop {
        for p in 0..m {
            let step = state.count_projection(p, level, sim);
            if !step.is_empty() {
                steps.push(step);
            }
            if check_t1(state.candidates().len(), cfg.k, g.beta, dataset.num_objects()) {
                levels += 1;
                break 'search StopReason::T1;
            }
        }
        levels += 1;

        let mut dists = Vec::with_capacity(state.candidates().len());
        for &slot in state.candidates() {
            let d = match gdist[slot] {
                Some(d) => d,
                None => {
                    let x = dataset.object_coords(slot);
                    let d = gamma_distance(&qcoords, &x, g.gamma)?;
                    let ops = (qcoords.len() * x.len() * dataset.dimension()) as u64;
                    sim.add_extra_ops(ops);
                    verify_ops += ops;
                    evaluations += 1;
                    gdist[slot] = Some(d);
                    d
                }
            };
            dists.push(d);
        }
        if check_t2(&dists, cfg.k, c as f64 * level as f64) {
            break StopReason::T2;
        }
        if state.exhausted() && state.candidates().len() < cfg.k {
            break StopReason::Exhausted;
        }
        match level.checked_mul(c) {
            Some(next) => level = next,
            None => break StopReason::Exhausted,
        }
    };

    let mut ranked = Vec::with_capacity(state.candidates().len());
    for &slot in state.candidates() {
        let d = match gdist[slot] {
            Some(d) => d,
            None => {
                let x = dataset.object_coords(slot);
                let ops = (qcoords.len() * x.len() * dataset.dimension()) as u64;
                sim.add_extra_ops(ops);
                verify_ops += ops;
                evaluations += 1;
                gamma_distance(&qcoords, &x, g.gamma)?
            }
        };
        ranked.push(Neighbor {
            object_id: dataset.object(slot).object_id,
            gamma_distance: d,
        });
    }
    ranked.sort_by(|a, b| {
        a.gamma_distance
            .total_cmp(&b.gamma_distance)
            .then(a.object_id.cmp(&b.object_id))
    });
    ranked.truncate(cfg.k);

    Ok(QueryResult {
        query_object_id: query.object_id,
        complete: ranked.len() == cfg.k,
        neighbors: ranked,
        stop,
        levels,
        final_level: level,
        candidates: state.candidates().len(),
        gamma_evaluations: evaluations,
        gamma_bound: bound,
        bound_violated,
        stats: sim.stats_since(&before),
        workload: QueryWorkload {
            query_len: query.len(),
            steps,
            extra_ops: verify_ops,
        },
    })
}
