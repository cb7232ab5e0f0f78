//! Python bindings: datasets, index build/load, object queries and the exact oracle.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mmlsh::baselines::exact_knn_objects;
use mmlsh::buffer::{SchedulerConfig, Simulator, Strategy};
use mmlsh::gamma::GammaParams;
use mmlsh::lsh::{build_index, derive_params, LshParams, DEFAULT_C, DEFAULT_W};
use mmlsh::model::{self, FeatureVector, QueryObject};
use mmlsh::query::{self, SearchConfig};

fn to_py(e: mmlsh::Error) -> PyErr {
    match e {
        mmlsh::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn query_object(points: Vec<Vec<f32>>) -> PyResult<QueryObject> {
    QueryObject::new(u32::MAX, points).map_err(to_py)
}

/// A set of feature vectors grouped into objects.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Arc<model::Dataset>,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from one vector per point and the object id of each point.
    #[new]
    fn new(points: Vec<Vec<f32>>, object_ids: Vec<u32>) -> PyResult<Self> {
        if points.len() != object_ids.len() {
            return Err(PyValueError::new_err("points and object_ids differ in length"));
        }
        let fvs = points
            .into_iter()
            .zip(object_ids)
            .enumerate()
            .map(|(i, (coords, oid))| FeatureVector {
                point_id: i as u32,
                object_id: Some(oid),
                coords,
            })
            .collect();
        Ok(Self {
            inner: Arc::new(model::Dataset::from_points(fvs).map_err(to_py)?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (objects, points_per_object, dimension, cluster_spread = 0.1, seed = 1))]
    fn synthetic(
        objects: usize,
        points_per_object: usize,
        dimension: usize,
        cluster_spread: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let ds = model::synth_dataset(objects, points_per_object, dimension, cluster_spread, seed)
            .map_err(to_py)?;
        Ok(Self { inner: Arc::new(ds) })
    }

    /// Loads a vector file and its point-to-object CSV.
    #[staticmethod]
    fn load(vectors: &str, objects: &str) -> PyResult<Self> {
        let points = model::load_feature_file(vectors).map_err(to_py)?;
        let ds = model::load_object_map(objects, points).map_err(to_py)?;
        Ok(Self { inner: Arc::new(ds) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn num_objects(&self) -> usize {
        self.inner.num_objects()
    }

    #[getter]
    fn object_ids(&self) -> Vec<u32> {
        self.inner.objects().iter().map(|o| o.object_id).collect()
    }

    /// The points of one object.
    fn object_points(&self, object_id: u32) -> PyResult<Vec<Vec<f32>>> {
        let slot = self
            .inner
            .slot_of_object(object_id)
            .ok_or_else(|| PyValueError::new_err(format!("no object {object_id}")))?;
        Ok(self.inner.object_as_query(slot).points)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(points={}, objects={}, dimension={})",
            self.inner.len(),
            self.inner.num_objects(),
            self.inner.dimension()
        )
    }
}

/// Derived LSH parameters.
#[pyclass(name = "LshParams", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyLshParams {
    c: u32,
    w: f64,
    delta: f64,
    beta: f64,
    p1: f64,
    p2: f64,
    z: f64,
    alpha: f64,
    m: usize,
    l: usize,
}

impl From<&LshParams> for PyLshParams {
    fn from(p: &LshParams) -> Self {
        Self {
            c: p.c,
            w: p.w,
            delta: p.delta,
            beta: p.beta,
            p1: p.p1,
            p2: p.p2,
            z: p.z,
            alpha: p.alpha,
            m: p.m,
            l: p.l,
        }
    }
}

#[pymethods]
impl PyLshParams {
    fn __repr__(&self) -> String {
        format!("LshParams(m={}, l={}, p1={:.6}, p2={:.6})", self.m, self.l, self.p1, self.p2)
    }
}

#[pyfunction(name = "derive_params")]
#[pyo3(signature = (delta, beta, c = DEFAULT_C, w = DEFAULT_W))]
fn py_derive_params(delta: f64, beta: f64, c: u32, w: f64) -> PyResult<PyLshParams> {
    Ok((&derive_params(delta, beta, c, w).map_err(to_py)?).into())
}

/// A built LSH index over a dataset.
#[pyclass(name = "Index", frozen)]
struct PyIndex {
    inner: Arc<mmlsh::lsh::LshIndex>,
}

#[pymethods]
impl PyIndex {
    /// Builds an index. `beta` defaults to 25 / number of objects.
    #[staticmethod]
    #[pyo3(signature = (dataset, delta = 0.1, beta = None, c = DEFAULT_C, w = DEFAULT_W, seed = 1, m = None, l = None))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        py: Python<'_>,
        dataset: &PyDataset,
        delta: f64,
        beta: Option<f64>,
        c: u32,
        w: f64,
        seed: u64,
        m: Option<usize>,
        l: Option<usize>,
    ) -> PyResult<Self> {
        let ds = dataset.inner.clone();
        let beta = beta.unwrap_or_else(|| (25.0 / ds.num_objects() as f64).min(0.5));
        let idx = py
            .detach(move || -> mmlsh::Result<_> {
                let mut p = derive_params(delta, beta, c, w)?;
                if m.is_some() || l.is_some() {
                    p = p.with_projections(m.unwrap_or(p.m), l.unwrap_or(p.l))?;
                }
                build_index(&ds, &p, seed)
            })
            .map_err(to_py)?;
        Ok(Self { inner: Arc::new(idx) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(mmlsh::lsh::LshIndex::load(path).map_err(to_py)?),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn params(&self) -> PyLshParams {
        self.inner.params().into()
    }

    #[getter]
    fn num_projections(&self) -> usize {
        self.inner.num_projections()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Base bucket of `point` in every projection.
    fn hash(&self, point: Vec<f32>) -> PyResult<Vec<i64>> {
        if point.len() != self.inner.dimension() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(self.inner.hash_all(&point))
    }

    fn __repr__(&self) -> String {
        let p = self.inner.params();
        format!("Index(points={}, m={}, l={})", self.inner.len(), p.m, p.l)
    }
}

/// Outcome of one object query.
#[pyclass(name = "QueryResult", frozen, get_all)]
struct PyQueryResult {
    /// `(object_id, gamma_distance)` pairs, nearest first.
    neighbors: Vec<(u32, f64)>,
    stop: String,
    complete: bool,
    levels: u32,
    candidates: usize,
    bound_violated: bool,
    total_ms: f64,
    alg_ms: f64,
    index_io_ms: f64,
    hits: u64,
    misses: u64,
}

#[pymethods]
impl PyQueryResult {
    fn __repr__(&self) -> String {
        format!(
            "QueryResult(k={}, stop={}, levels={}, total_ms={:.3})",
            self.neighbors.len(),
            self.stop,
            self.levels,
            self.total_ms
        )
    }
}

/// Top-k objects nearest to the query point set.
#[pyfunction]
#[pyo3(signature = (index, dataset, query, k, gamma, delta = 0.1, beta = None, epsilon = None,
                    strategy = "mmlsh", buffer_mb = 30.0, bucket_scale = 1))]
#[allow(clippy::too_many_arguments)]
fn knn_objects(
    py: Python<'_>,
    index: &PyIndex,
    dataset: &PyDataset,
    query: Vec<Vec<f32>>,
    k: usize,
    gamma: f64,
    delta: f64,
    beta: Option<f64>,
    epsilon: Option<f64>,
    strategy: &str,
    buffer_mb: f64,
    bucket_scale: u64,
) -> PyResult<PyQueryResult> {
    let ds = dataset.inner.clone();
    let idx = index.inner.clone();
    let q = query_object(query)?;
    let strategy: Strategy = strategy.parse().map_err(to_py)?;
    let beta = beta.unwrap_or_else(|| (25.0 / ds.num_objects() as f64).min(0.5));
    let gp = GammaParams::with_epsilon(gamma, epsilon.unwrap_or(2.0 * delta), beta, delta)
        .map_err(to_py)?;
    let r = py
        .detach(move || -> mmlsh::Result<_> {
            let mut sim = Simulator::new(SchedulerConfig::new(strategy), (buffer_mb * 1e6) as u64)?
                .with_bucket_scale(bucket_scale)?;
            query::knn_objects(&idx, &ds, &q, &SearchConfig { k, gamma: gp }, &mut sim)
        })
        .map_err(to_py)?;
    Ok(PyQueryResult {
        neighbors: r
            .neighbors
            .iter()
            .map(|n| (n.object_id, n.gamma_distance))
            .collect(),
        stop: format!("{:?}", r.stop),
        complete: r.complete,
        levels: r.levels,
        candidates: r.candidates,
        bound_violated: r.bound_violated,
        total_ms: r.stats.total_ms,
        alg_ms: r.stats.alg_ms,
        index_io_ms: r.stats.index_io_ms,
        hits: r.stats.io.hits,
        misses: r.stats.io.misses,
    })
}

/// Exact top-k objects by brute force.
#[pyfunction]
fn exact_knn(dataset: &PyDataset, query: Vec<Vec<f32>>, k: usize, gamma: f64) -> PyResult<Vec<(u32, f64)>> {
    let q = query_object(query)?;
    Ok(exact_knn_objects(&dataset.inner, &q, k, gamma)
        .map_err(to_py)?
        .into_iter()
        .map(|n| (n.object_id, n.gamma_distance))
        .collect())
}

#[pyfunction]
fn gamma_distance(query: Vec<Vec<f32>>, object: Vec<Vec<f32>>, gamma: f64) -> PyResult<f64> {
    let q: Vec<&[f32]> = query.iter().map(Vec::as_slice).collect();
    let x: Vec<&[f32]> = object.iter().map(Vec::as_slice).collect();
    mmlsh::gamma::gamma_distance(&q, &x, gamma).map_err(to_py)
}

#[pyfunction]
fn gamma_min_bound(query_len: usize, object_len: usize, delta: f64, epsilon: f64, beta: f64) -> PyResult<f64> {
    query::gamma_min_bound(query_len, object_len, delta, epsilon, beta).map_err(to_py)
}

#[pymodule]
fn pymmlsh(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyLshParams>()?;
    m.add_class::<PyQueryResult>()?;
    m.add_function(wrap_pyfunction!(py_derive_params, m)?)?;
    m.add_function(wrap_pyfunction!(knn_objects, m)?)?;
    m.add_function(wrap_pyfunction!(exact_knn, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_distance, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_min_bound, m)?)?;
    Ok(())
}
