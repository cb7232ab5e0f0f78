//! Experiment driver: run configuration, the benchmark commands and reports.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    borda_knn_objects, default_beta_point, BordaConfig, GroundTruth, PointMethod,
};
use crate::buffer::{
    build_frequency_profile, run_strategy_report, working_set_bytes, write_strategy_csv,
    write_trace, AlgCostModel, CostModel, FrequencyProfile, QueryWorkload, ReplaySettings,
    SchedulerConfig, Simulator, Strategy, StrategyRow,
};
use crate::error::{Error, Result};
use crate::gamma::{gamma_distance, object_ratio_from_distances, GammaParams};
use crate::lsh::{build_index, derive_params, LshIndex, LshParams, DEFAULT_C, DEFAULT_W};
use crate::model::{
    apply_object_map, load_feature_file, sample_queries, Dataset, ObjectId, QueryObject, SynthSpec,
};
use crate::query::{gamma_min_bound, knn_objects, SearchConfig};

pub const MB: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    pub points_per_object: usize,
    pub dimension: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 200,
            points_per_object: 20,
            dimension: 32,
            cluster_spread: 0.1,
            seed: 1,
        }
    }
}

/// Everything a benchmark run needs. Loaded from TOML; any field may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vectors: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub synth: Option<SynthConfig>,

    pub index: PathBuf,
    pub profile: PathBuf,
    pub groundtruth: PathBuf,
    pub output: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub trace: Option<PathBuf>,

    pub delta: f64,
    /// Defaults to 25 / S.
    pub beta: Option<f64>,
    /// Defaults to 2δ.
    pub epsilon: Option<f64>,
    /// Defaults to the reliability bound rounded up to 0.01, at least 0.5.
    pub gamma: Option<f64>,
    pub c: u32,
    pub w: f64,
    pub m: Option<usize>,
    pub l: Option<usize>,

    pub k: usize,
    pub k_primes: Vec<usize>,
    /// Defaults to 100 / n.
    pub beta_point: Option<f64>,
    pub queries: usize,
    pub points_per_query: Option<usize>,
    pub seed: u64,

    pub strategy: Strategy,
    pub query_splits: usize,
    pub buffer_mb: f64,
    pub buffer_sizes_mb: Vec<f64>,
    pub bucket_scale: u64,
    pub seek_ms: f64,
    pub read_mb_per_ms: f64,
    pub ns_per_op: Option<f64>,
    pub calibrate: bool,
    pub profile_queries: usize,
    pub profile_regions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cost = CostModel::default();
        Self {
            vectors: None,
            objects: None,
            synth: None,
            index: "mmlsh.idx".into(),
            profile: "mmlsh.profile".into(),
            groundtruth: "groundtruth.csv".into(),
            output: None,
            json: None,
            trace: None,
            delta: 0.1,
            beta: None,
            epsilon: None,
            gamma: None,
            c: DEFAULT_C,
            w: DEFAULT_W,
            m: None,
            l: None,
            k: 25,
            k_primes: vec![25, 50, 100],
            beta_point: None,
            queries: 10,
            points_per_query: None,
            seed: 1,
            strategy: Strategy::Mmlsh,
            query_splits: crate::buffer::DEFAULT_QUERY_SPLITS,
            buffer_mb: 30.0,
            buffer_sizes_mb: vec![20.0, 30.0, 40.0, 50.0],
            bucket_scale: 1,
            seek_ms: cost.seek_ms,
            read_mb_per_ms: cost.read_mb_per_ms,
            ns_per_op: None,
            calibrate: false,
            profile_queries: crate::buffer::DEFAULT_PROFILE_QUERIES,
            profile_regions: crate::buffer::DEFAULT_PROFILE_REGIONS,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param(format!("bad config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::param(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.vectors, &self.objects, &self.synth) {
            (Some(v), Some(o), None) => {
                for p in [v, o] {
                    if !p.exists() {
                        return Err(Error::param(format!("dataset file {} does not exist", p.display())));
                    }
                }
            }
            (None, None, Some(_)) => {}
            (Some(_), None, _) | (None, Some(_), _) => {
                return Err(Error::param("a file dataset needs both vectors and objects"))
            }
            (None, None, None) => {
                return Err(Error::param("no dataset: give vectors + objects or a synth config"))
            }
            _ => return Err(Error::param("give either dataset files or a synth config, not both")),
        }
        if self.k == 0 || self.queries == 0 {
            return Err(Error::param("k and queries must be at least 1"));
        }
        if self.k_primes.is_empty() || self.k_primes.contains(&0) {
            return Err(Error::param("k_primes must be non-empty and positive"));
        }
        let sizes_ok = self.buffer_sizes_mb.iter().all(|&s| s > 0.0 && s.is_finite());
        if !(self.buffer_mb > 0.0 && self.buffer_mb.is_finite()) || !sizes_ok || self.buffer_sizes_mb.is_empty() {
            return Err(Error::param("buffer sizes must be positive"));
        }
        if self.bucket_scale == 0 || self.query_splits == 0 {
            return Err(Error::param("bucket_scale and query_splits must be at least 1"));
        }
        if !(self.seek_ms >= 0.0) || !(self.read_mb_per_ms > 0.0) {
            return Err(Error::param("seek_ms must be >= 0 and read_mb_per_ms > 0"));
        }
        if matches!(self.ns_per_op, Some(v) if !(v > 0.0)) {
            return Err(Error::param("ns_per_op must be positive"));
        }
        if self.profile_queries == 0 || self.profile_regions == 0 {
            return Err(Error::param("profile_queries and profile_regions must be at least 1"));
        }
        Ok(())
    }

    pub fn cost(&self) -> CostModel {
        CostModel {
            seek_ms: self.seek_ms,
            read_mb_per_ms: self.read_mb_per_ms,
        }
    }

    /// The algorithm cost constant, measured on this host when `calibrate` is set.
    pub fn alg_cost(&self) -> AlgCostModel {
        match self.ns_per_op {
            Some(ns) => AlgCostModel { ns_per_op: ns },
            None if self.calibrate => AlgCostModel::calibrate(),
            None => AlgCostModel::default(),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        self.validate()?;
        if let Some(s) = &self.synth {
            return SynthSpec {
                objects: s.objects,
                points_per_object: s.points_per_object,
                dimension: s.dimension,
                cluster_spread: s.cluster_spread,
                seed: s.seed,
            }
            .generate();
        }
        let (v, o) = (self.vectors.as_ref().unwrap(), self.objects.as_ref().unwrap());
        let points = load_feature_file(v)?;
        apply_object_map(&fs::read_to_string(o)?, points)
    }

    pub fn lsh_params(&self, dataset: &Dataset) -> Result<LshParams> {
        let beta = self.beta_for(dataset);
        let p = derive_params(self.delta, beta, self.c, self.w)?;
        match (self.m, self.l) {
            (None, None) => Ok(p),
            (m, l) => p.with_projections(m.unwrap_or(p.m), l.unwrap_or(p.l)),
        }
    }

    fn beta_for(&self, dataset: &Dataset) -> f64 {
        self.beta
            .unwrap_or_else(|| (25.0 / dataset.num_objects() as f64).min(0.5))
    }

    pub fn gamma_params(&self, dataset: &Dataset, query_len: usize) -> Result<GammaParams> {
        let beta = self.beta_for(dataset);
        let epsilon = self.epsilon.unwrap_or(2.0 * self.delta);
        let gamma = match self.gamma {
            Some(g) => g,
            None => {
                let b = gamma_min_bound(query_len, dataset.min_object_size(), self.delta, epsilon, beta)?;
                ((b * 100.0).ceil() / 100.0).clamp(0.5, 1.0)
            }
        };
        GammaParams::with_epsilon(gamma, epsilon, beta, self.delta)
    }

    pub fn sample_queries(&self, dataset: &Dataset) -> Result<Vec<QueryObject>> {
        sample_queries(dataset, self.queries.min(dataset.num_objects()), self.points_per_query, self.seed)
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_object_id: ObjectId,
    pub method: String,
    pub k_prime: Option<usize>,
    pub object_ratio: f64,
    pub total_ms: f64,
    pub alg_ms: f64,
    pub index_io_ms: f64,
    pub stop: String,
    pub levels: Option<u32>,
    pub complete: bool,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub k_prime: Option<usize>,
    pub queries: usize,
    pub mean_object_ratio: f64,
    /// Population standard deviation, not reported in the original protocol.
    pub std_object_ratio: f64,
    pub mean_total_ms: f64,
    pub std_total_ms: f64,
    pub mean_alg_ms: f64,
    pub mean_index_io_ms: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-method means, in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<MethodSummary> {
    let mut keys: Vec<(String, Option<usize>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.k_prime);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, k_prime)| {
            let sel: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.method == method && r.k_prime == k_prime)
                .collect();
            let col = |f: fn(&ReportRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mor, sor) = mean_std(&col(|r| r.object_ratio));
            let (mt, st) = mean_std(&col(|r| r.total_ms));
            MethodSummary {
                method,
                k_prime,
                queries: sel.len(),
                mean_object_ratio: mor,
                std_object_ratio: sor,
                mean_total_ms: mt,
                std_total_ms: st,
                mean_alg_ms: mean_std(&col(|r| r.alg_ms)).0,
                mean_index_io_ms: mean_std(&col(|r| r.index_io_ms)).0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub ns_per_op: f64,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn new(config: RunConfig, ns_per_op: f64, rows: Vec<ReportRow>) -> Self {
        let summary = summarize(&rows);
        Self {
            config,
            ns_per_op,
            rows,
            summary,
        }
    }

    pub fn summary_for(&self, method: &str, k_prime: Option<usize>) -> Option<&MethodSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.k_prime == k_prime)
    }

    fn header(&self) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "# ns_per_op = {:?}", self.ns_per_op);
        for line in self.config.to_toml().lines() {
            let _ = writeln!(h, "# {line}");
        }
        h
    }

    /// Per-query rows as CSV, preceded by the resolved config as `#` lines.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        out.write_all(self.header().as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "query_object_id",
            "method",
            "k_prime",
            "object_ratio",
            "total_ms",
            "alg_ms",
            "index_io_ms",
            "stop",
            "levels",
            "complete",
            "hits",
            "misses",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.query_object_id.to_string(),
                r.method.clone(),
                r.k_prime.map(|k| k.to_string()).unwrap_or_default(),
                format!("{:?}", r.object_ratio),
                format!("{:?}", r.total_ms),
                format!("{:?}", r.alg_ms),
                format!("{:?}", r.index_io_ms),
                r.stop.clone(),
                r.levels.map(|l| l.to_string()).unwrap_or_default(),
                r.complete.to_string(),
                r.hits.to_string(),
                r.misses.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "k_prime",
            "queries",
            "mean_object_ratio",
            "std_object_ratio",
            "mean_total_ms",
            "std_total_ms",
            "mean_alg_ms",
            "mean_index_io_ms",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.method.clone(),
                s.k_prime.map(|k| k.to_string()).unwrap_or_default(),
                s.queries.to_string(),
                format!("{:?}", s.mean_object_ratio),
                format!("{:?}", s.std_object_ratio),
                format!("{:?}", s.mean_total_ms),
                format!("{:?}", s.std_total_ms),
                format!("{:?}", s.mean_alg_ms),
                format!("{:?}", s.mean_index_io_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned human-readable summary.
    pub fn table(&self) -> String {
        let mut rows = vec![[
            "method".to_string(),
            "k'".to_string(),
            "OR (mean)".to_string(),
            "OR (std)".to_string(),
            "total ms".to_string(),
            "alg ms".to_string(),
            "index io ms".to_string(),
        ]];
        for s in &self.summary {
            rows.push([
                s.method.clone(),
                s.k_prime.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                format!("{:.4}", s.mean_object_ratio),
                format!("{:.4}", s.std_object_ratio),
                format!("{:.3}", s.mean_total_ms),
                format!("{:.3}", s.mean_alg_ms),
                format!("{:.3}", s.mean_index_io_ms),
            ]);
        }
        align(&rows)
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Report(e.to_string()))
    }

    /// Writes the CSV (plus a `-summary.csv` sibling) and JSON outputs the config asks for.
    pub fn emit(&self) -> Result<()> {
        if let Some(path) = &self.config.output {
            self.write_csv(fs::File::create(path)?)?;
            self.write_summary_csv(fs::File::create(summary_path(path))?)?;
        }
        if let Some(path) = &self.config.json {
            self.write_json(fs::File::create(path)?)?;
        }
        Ok(())
    }
}

fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}-summary.csv"))
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let mut width = [0usize; N];
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let mut out = String::new();
    for (j, r) in rows.iter().enumerate() {
        for (i, c) in r.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = width[i]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[i]);
            }
        }
        out.push('\n');
        if j == 0 {
            let total = width.iter().sum::<usize>() + 2 * (N - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub params: LshParams,
    pub points: usize,
    pub objects: usize,
    pub index_path: PathBuf,
    pub profile_path: PathBuf,
}

impl std::fmt::Display for BuildSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = &self.params;
        writeln!(f, "points = {}, objects = {}", self.points, self.objects)?;
        writeln!(f, "m = {}, l = {}", p.m, p.l)?;
        writeln!(f, "p1 = {:.10}, p2 = {:.10}", p.p1, p.p2)?;
        writeln!(f, "index -> {}", self.index_path.display())?;
        write!(f, "profile -> {}", self.profile_path.display())
    }
}

/// Builds and saves the index and its frequency profile.
pub fn cmd_build(cfg: &RunConfig) -> Result<BuildSummary> {
    let ds = cfg.load_dataset()?;
    let params = cfg.lsh_params(&ds)?;
    let index = build_index(&ds, &params, cfg.seed)?;
    index.save(&cfg.index)?;
    let profile = build_frequency_profile(&index, cfg.profile_queries, cfg.profile_regions, cfg.seed)?;
    profile.save(&cfg.profile)?;
    Ok(BuildSummary {
        params,
        points: ds.len(),
        objects: ds.num_objects(),
        index_path: cfg.index.clone(),
        profile_path: cfg.profile.clone(),
    })
}

/// Loads the saved index when it matches the dataset, otherwise builds one in memory.
pub fn load_or_build_index(cfg: &RunConfig, ds: &Dataset) -> Result<LshIndex> {
    if cfg.index.exists() {
        let idx = LshIndex::load(&cfg.index)?;
        if idx.len() != ds.len() || idx.dimension() != ds.dimension() {
            return Err(Error::IndexLoad(format!(
                "{} indexes {} points of dimension {}, dataset has {} of dimension {}",
                cfg.index.display(),
                idx.len(),
                idx.dimension(),
                ds.len(),
                ds.dimension()
            )));
        }
        return Ok(idx);
    }
    log::info!("{} not found, building the index in memory", cfg.index.display());
    build_index(ds, &cfg.lsh_params(ds)?, cfg.seed)
}

pub fn load_or_build_profile(cfg: &RunConfig, index: &LshIndex) -> Result<FrequencyProfile> {
    if cfg.profile.exists() {
        let p = FrequencyProfile::load(&cfg.profile)?;
        if p.num_projections() != index.num_projections() {
            return Err(Error::Report(format!(
                "{} covers {} projections, index has {}",
                cfg.profile.display(),
                p.num_projections(),
                index.num_projections()
            )));
        }
        return Ok(p);
    }
    build_frequency_profile(index, cfg.profile_queries, cfg.profile_regions, cfg.seed)
}

fn groundtruth_key(cfg: &RunConfig, ds: &Dataset, gamma: f64) -> String {
    format!(
        "# mmlsh groundtruth points={} objects={} queries={} points_per_query={:?} k={} gamma={:?} seed={}",
        ds.len(),
        ds.num_objects(),
        cfg.queries,
        cfg.points_per_query,
        cfg.k,
        gamma,
        cfg.seed
    )
}

/// Exact answers for the sampled queries, read from the cache file when it
/// was written for the same settings.
pub fn cmd_groundtruth(cfg: &RunConfig) -> Result<(GroundTruth, bool)> {
    let ds = cfg.load_dataset()?;
    let queries = cfg.sample_queries(&ds)?;
    groundtruth_for(cfg, &ds, &queries)
}

fn groundtruth_for(cfg: &RunConfig, ds: &Dataset, queries: &[QueryObject]) -> Result<(GroundTruth, bool)> {
    let gamma = cfg.gamma_params(ds, queries[0].len())?.gamma;
    let key = groundtruth_key(cfg, ds, gamma);
    if let Ok(text) = fs::read_to_string(&cfg.groundtruth) {
        if let Some(body) = text.strip_prefix(&key).and_then(|b| b.strip_prefix('\n')) {
            return Ok((GroundTruth::read_csv(body.as_bytes())?, true));
        }
    }
    let gt = GroundTruth::compute(ds, queries, cfg.k, gamma)?;
    let mut buf = format!("{key}\n").into_bytes();
    gt.write_csv(&mut buf)?;
    fs::write(&cfg.groundtruth, buf)?;
    Ok((gt, false))
}

struct Prepared {
    ds: Dataset,
    index: LshIndex,
    profile: FrequencyProfile,
    queries: Vec<QueryObject>,
    truth: GroundTruth,
    alg: AlgCostModel,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let ds = cfg.load_dataset()?;
    let index = load_or_build_index(cfg, &ds)?;
    let profile = load_or_build_profile(cfg, &index)?;
    let queries = cfg.sample_queries(&ds)?;
    let (truth, _) = groundtruth_for(cfg, &ds, &queries)?;
    Ok(Prepared {
        ds,
        index,
        profile,
        queries,
        truth,
        alg: cfg.alg_cost(),
    })
}

fn ratio_against(truth: &GroundTruth, qid: ObjectId, returned: &[f64]) -> Result<f64> {
    let want = truth
        .get(qid)
        .ok_or_else(|| Error::Report(format!("no ground truth for query object {qid}")))?;
    let n = returned.len().min(want.len());
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let want: Vec<f64> = want[..n].iter().map(|x| x.gamma_distance).collect();
    Ok(object_ratio_from_distances(&returned[..n], &want)?.value)
}

fn mmlsh_rows(
    cfg: &RunConfig,
    p: &Prepared,
    strategy: Strategy,
    method: &str,
    workloads: Option<&mut Vec<QueryWorkload>>,
) -> Result<Vec<ReportRow>> {
    let mut sched = SchedulerConfig::new(strategy);
    sched.query_splits = cfg.query_splits;
    let mut sim = Simulator::new(sched, (cfg.buffer_mb * MB) as u64)?
        .with_costs(cfg.cost(), p.alg)
        .with_profile(Some(&p.profile))
        .with_bucket_scale(cfg.bucket_scale)?;
    if cfg.trace.is_some() {
        sim = sim.with_trace();
    }
    let mut rows = Vec::new();
    let mut recorded = Vec::new();
    for q in &p.queries {
        let search = SearchConfig {
            k: cfg.k,
            gamma: cfg.gamma_params(&p.ds, q.len())?,
        };
        let r = knn_objects(&p.index, &p.ds, q, &search, &mut sim)?;
        let got: Vec<f64> = r.neighbors.iter().map(|n| n.gamma_distance).collect();
        rows.push(ReportRow {
            query_object_id: q.object_id,
            method: method.to_string(),
            k_prime: None,
            object_ratio: ratio_against(&p.truth, q.object_id, &got)?,
            total_ms: r.stats.total_ms,
            alg_ms: r.stats.alg_ms,
            index_io_ms: r.stats.index_io_ms,
            stop: format!("{:?}", r.stop),
            levels: Some(r.levels),
            complete: r.complete,
            hits: r.stats.io.hits,
            misses: r.stats.io.misses,
        });
        recorded.push(r.workload);
    }
    if let Some(path) = &cfg.trace {
        write_trace(&sim.buffer_mut().take_trace(), fs::File::create(path)?)?;
    }
    if let Some(w) = workloads {
        *w = recorded;
    }
    Ok(rows)
}

/// Runs every sampled query through mmLSH under the configured strategy.
pub fn cmd_query(cfg: &RunConfig) -> Result<BenchReport> {
    let p = prepare(cfg)?;
    let rows = mmlsh_rows(cfg, &p, cfg.strategy, "mmLSH", None)?;
    Ok(BenchReport::new(cfg.clone(), p.alg.ns_per_op, rows))
}

fn borda_rows(cfg: &RunConfig, p: &Prepared, method: PointMethod, k_prime: usize) -> Result<Vec<ReportRow>> {
    let name = match method {
        PointMethod::Linear => "LinearSearch-Borda",
        PointMethod::C2lsh => "C2LSH-Borda",
    };
    let mut sim = Simulator::new(SchedulerConfig::new(Strategy::Ns1), (cfg.buffer_mb * MB) as u64)?
        .with_costs(cfg.cost(), p.alg)
        .with_bucket_scale(cfg.bucket_scale)?;
    let bc = BordaConfig {
        k: cfg.k,
        k_prime,
        method,
        beta_point: cfg.beta_point.unwrap_or_else(|| default_beta_point(p.ds.len())),
    };
    let gamma = cfg.gamma_params(&p.ds, p.queries[0].len())?.gamma;
    let mut rows = Vec::new();
    for q in &p.queries {
        let r = borda_knn_objects(Some(&p.index), &p.ds, q, &bc, &mut sim)?;
        let qc = q.coords();
        let mut got = Vec::with_capacity(r.objects.len());
        for (oid, _) in &r.objects {
            let slot = p.ds.slot_of_object(*oid).expect("returned object exists");
            got.push(gamma_distance(&qc, &p.ds.object_coords(slot), gamma)?);
        }
        rows.push(ReportRow {
            query_object_id: q.object_id,
            method: name.to_string(),
            k_prime: Some(k_prime),
            object_ratio: ratio_against(&p.truth, q.object_id, &got)?,
            total_ms: r.stats.total_ms,
            alg_ms: r.stats.alg_ms,
            index_io_ms: r.stats.index_io_ms,
            stop: "-".into(),
            levels: None,
            complete: r.objects.len() == cfg.k,
            hits: r.stats.io.hits,
            misses: r.stats.io.misses,
        });
    }
    Ok(rows)
}

/// mmLSH against both Borda baselines at every k′.
pub fn cmd_compare(cfg: &RunConfig) -> Result<BenchReport> {
    let p = prepare(cfg)?;
    let mut rows = mmlsh_rows(cfg, &p, cfg.strategy, "mmLSH", None)?;
    for &kp in &cfg.k_primes {
        rows.extend(borda_rows(cfg, &p, PointMethod::Linear, kp)?);
        rows.extend(borda_rows(cfg, &p, PointMethod::C2lsh, kp)?);
    }
    Ok(BenchReport::new(cfg.clone(), p.alg.ns_per_op, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: RunConfig,
    pub ns_per_op: f64,
    pub working_set_bytes: u64,
    pub rows: Vec<StrategyRow>,
}

impl SweepReport {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# ns_per_op = {:?}", self.ns_per_op)?;
        writeln!(out, "# working_set_bytes = {}", self.working_set_bytes)?;
        for line in self.config.to_toml().lines() {
            writeln!(out, "# {line}")?;
        }
        write_strategy_csv(&self.rows, out)
    }

    pub fn table(&self) -> String {
        let mut rows = vec![[
            "strategy".to_string(),
            "buffer MB".to_string(),
            "hit rate".to_string(),
            "total ms".to_string(),
            "alg ms".to_string(),
            "index io ms".to_string(),
        ]];
        for r in &self.rows {
            rows.push([
                r.strategy.to_string(),
                format!("{}", r.buffer_bytes as f64 / MB),
                format!("{:.4}", r.hit_rate()),
                format!("{:.3}", r.total_ms),
                format!("{:.3}", r.alg_ms),
                format!("{:.3}", r.index_io_ms),
            ]);
        }
        align(&rows)
    }

    pub fn emit(&self) -> Result<()> {
        if let Some(path) = &self.config.output {
            self.write_csv(fs::File::create(path)?)?;
        }
        if let Some(path) = &self.config.json {
            serde_json::to_writer_pretty(fs::File::create(path)?, self)
                .map_err(|e| Error::Report(e.to_string()))?;
        }
        Ok(())
    }
}

/// Records the query workload once, then replays it for NS1, NS2 and MMLSH at
/// every buffer size with a cold buffer each time.
pub fn cmd_buffer_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let p = prepare(cfg)?;
    let mut workloads = Vec::new();
    mmlsh_rows(cfg, &p, Strategy::Ns1, "record", Some(&mut workloads))?;
    let settings = ReplaySettings {
        cost: cfg.cost(),
        alg: p.alg,
        profile: Some(&p.profile),
        bucket_scale: cfg.bucket_scale,
        query_splits: cfg.query_splits,
    };
    let sizes: Vec<u64> = cfg.buffer_sizes_mb.iter().map(|&mb| (mb * MB) as u64).collect();
    let rows = run_strategy_report(&workloads, &Strategy::ALL, &sizes, &settings)?;
    Ok(SweepReport {
        config: cfg.clone(),
        ns_per_op: p.alg.ns_per_op,
        working_set_bytes: working_set_bytes(&workloads, cfg.bucket_scale),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, or: f64, t: f64) -> ReportRow {
        ReportRow {
            query_object_id: 0,
            method: method.into(),
            k_prime: None,
            object_ratio: or,
            total_ms: t,
            alg_ms: t / 2.0,
            index_io_ms: t / 2.0,
            stop: "T1".into(),
            levels: Some(1),
            complete: true,
            hits: 0,
            misses: 0,
        }
    }

    #[test]
    fn summary_recomputes_from_rows() {
        let rows = vec![row("a", 1.0, 2.0), row("b", 2.0, 1.0), row("a", 3.0, 4.0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, "a");
        assert_eq!(s[0].queries, 2);
        assert_eq!(s[0].mean_object_ratio, 2.0);
        assert_eq!(s[0].std_object_ratio, 1.0);
        assert_eq!(s[0].mean_total_ms, 3.0);
        assert_eq!(s[1].mean_object_ratio, 2.0);
    }

    #[test]
    fn config_defaults_follow_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.k, 25);
        assert_eq!(c.k_primes, vec![25, 50, 100]);
        assert_eq!(c.buffer_mb, 30.0);
        assert_eq!(c.buffer_sizes_mb, vec![20.0, 30.0, 40.0, 50.0]);
        assert_eq!(c.queries, 10);
        assert_eq!(c.delta, 0.1);
    }

    #[test]
    fn config_toml_round_trips() {
        let c = RunConfig {
            synth: Some(SynthConfig::default()),
            gamma: Some(0.9),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_toml("nonsense = 3").is_err());
    }

    #[test]
    fn validation_catches_missing_dataset() {
        let c = RunConfig::default();
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
        let c = RunConfig {
            vectors: Some("/nonexistent/v.fvecs".into()),
            objects: Some("/nonexistent/o.csv".into()),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn default_gamma_meets_the_bound() {
        let c = RunConfig {
            synth: Some(SynthConfig::default()),
            ..RunConfig::default()
        };
        let ds = crate::model::synth_dataset(200, 20, 4, 0.1, 1).unwrap();
        let g = c.gamma_params(&ds, 20).unwrap();
        let b = gamma_min_bound(20, 20, 0.1, 0.2, 0.125).unwrap();
        assert!(g.gamma >= b);
        assert!((g.beta - 0.125).abs() < 1e-15);
    }

    #[test]
    fn table_is_aligned() {
        let r = BenchReport::new(RunConfig::default(), 2.0, vec![row("mmLSH", 1.0, 2.0)]);
        let t = r.table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[2].len());
    }
}
