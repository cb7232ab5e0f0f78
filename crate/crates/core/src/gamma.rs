//! Object-level similarity: R-object similarity, Γ-distance, collision index,
//! the candidacy predicates and the object-ratio accuracy metric.
//!
//! Point sets are passed as slices of coordinate slices so that query objects
//! and dataset objects share one code path.

use crate::error::{Error, Result};

/// Squared Euclidean distance, accumulated in `f64`.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn check_sets(q: &[&[f32]], x: &[&[f32]]) -> Result<()> {
    if q.is_empty() || x.is_empty() {
        return Err(Error::param("point sets must be non-empty"));
    }
    let d = q[0].len();
    for p in q.iter().chain(x) {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
    }
    Ok(())
}

/// Fraction of cross pairs `(q, x)` within Euclidean distance `r`.
pub fn r_object_similarity(q: &[&[f32]], x: &[&[f32]], r: f64) -> Result<f64> {
    check_sets(q, x)?;
    // compare rooted distances so that sim(Q, X, gamma_distance(..)) is exact
    let hits = q
        .iter()
        .flat_map(|a| x.iter().map(move |b| euclidean(a, b)))
        .filter(|&d| d <= r)
        .count();
    Ok(hits as f64 / (q.len() * x.len()) as f64)
}

/// Smallest `t` in `1..=pairs` with `t / pairs >= gamma`, evaluated in the
/// same floating-point arithmetic as [`r_object_similarity`].
pub fn gamma_rank(gamma: f64, pairs: usize) -> usize {
    let n = pairs as f64;
    let mut t = ((gamma * n).ceil() as usize).clamp(1, pairs);
    while t > 1 && (t - 1) as f64 / n >= gamma {
        t -= 1;
    }
    while t < pairs && (t as f64) / n < gamma {
        t += 1;
    }
    t
}

/// Γ-distance: the smallest radius at which the R-object similarity reaches
/// `gamma`. This is the `gamma_rank`-th smallest cross-pair distance.
pub fn gamma_distance(q: &[&[f32]], x: &[&[f32]], gamma: f64) -> Result<f64> {
    check_sets(q, x)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut d2: Vec<f64> = Vec::with_capacity(q.len() * x.len());
    for a in q {
        for b in x {
            d2.push(squared_distance(a, b));
        }
    }
    let t = gamma_rank(gamma, d2.len());
    let (_, nth, _) = d2.select_nth_unstable_by(t - 1, f64::total_cmp);
    Ok(nth.sqrt())
}

/// Collision index from a `|Q| x |X|` matrix of collision counts.
pub fn collision_index(counts: &[Vec<u32>], threshold: u32) -> f64 {
    let pairs: usize = counts.iter().map(Vec::len).sum();
    if pairs == 0 {
        return 0.0;
    }
    let qualifying = counts.iter().flatten().filter(|&&c| c >= threshold).count();
    qualifying as f64 / pairs as f64
}

/// Collision index from an already-counted number of qualifying pairs.
#[inline]
pub fn collision_index_from_count(qualifying: usize, query_len: usize, object_len: usize) -> f64 {
    qualifying as f64 / (query_len * object_len) as f64
}

/// Γ, ε, β and δ for object-level search.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub delta: f64,
}

impl GammaParams {
    /// ε defaults to 2δ.
    pub fn new(gamma: f64, delta: f64, beta: f64) -> Result<Self> {
        Self::with_epsilon(gamma, 2.0 * delta, beta, delta)
    }

    pub fn with_epsilon(gamma: f64, epsilon: f64, beta: f64, delta: f64) -> Result<Self> {
        let p = Self {
            gamma,
            epsilon,
            beta,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !open(self.epsilon) || !open(self.beta) || !open(self.delta) {
            return Err(Error::param("epsilon, beta and delta must lie in (0, 1)"));
        }
        if self.epsilon <= self.delta {
            return Err(Error::param(format!(
                "epsilon ({}) must exceed delta ({})",
                self.epsilon, self.delta
            )));
        }
        Ok(())
    }

    /// `(1 - ε) Γ`
    pub fn candidate_threshold(&self) -> f64 {
        (1.0 - self.epsilon) * self.gamma
    }

    /// `Γ + β / 2`
    pub fn false_positive_threshold(&self) -> f64 {
        self.gamma + self.beta / 2.0
    }
}

pub fn is_gamma_candidate(ci: f64, params: &GammaParams) -> bool {
    ci >= params.candidate_threshold()
}

pub fn is_gamma_false_positive(ci: f64, gamma_dist: f64, c_r: f64, params: &GammaParams) -> bool {
    ci >= params.false_positive_threshold() && gamma_dist > c_r
}

/// Mean per-rank ratio of returned to true Γ-distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectRatio {
    pub value: f64,
    /// Ranks where the true distance was zero but the returned one was not;
    /// each contributes `+inf` to `value`.
    pub unbounded_terms: usize,
}

pub fn object_ratio_from_distances(returned: &[f64], truth: &[f64]) -> Result<ObjectRatio> {
    if returned.len() != truth.len() || returned.is_empty() {
        return Err(Error::param(format!(
            "object ratio needs equal non-empty lists, got {} and {}",
            returned.len(),
            truth.len()
        )));
    }
    let mut unbounded = 0;
    let sum: f64 = returned
        .iter()
        .zip(truth)
        .map(|(&got, &want)| {
            if want == 0.0 {
                if got == 0.0 {
                    1.0
                } else {
                    unbounded += 1;
                    f64::INFINITY
                }
            } else {
                got / want
            }
        })
        .sum();
    Ok(ObjectRatio {
        value: sum / returned.len() as f64,
        unbounded_terms: unbounded,
    })
}

/// Object ratio computed from scratch for two lists of object slots.
pub fn object_ratio(
    query: &[&[f32]],
    returned: &[&[&[f32]]],
    truth: &[&[&[f32]]],
    gamma: f64,
) -> Result<ObjectRatio> {
    let dists = |objs: &[&[&[f32]]]| -> Result<Vec<f64>> {
        objs.iter().map(|x| gamma_distance(query, x, gamma)).collect()
    };
    object_ratio_from_distances(&dists(returned)?, &dists(truth)?)
}
