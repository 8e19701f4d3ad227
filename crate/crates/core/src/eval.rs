//! Ground truth, quality measures and experiment drivers.
//!
//! Recall follows the usual definition: for each evaluated item, count how
//! many of its true top-`k` neighbors appear among its first `k` candidates,
//! sum, and divide by `items * k`. The scanning rate is the number of
//! distance evaluations divided by `n * (n - 1) / 2`, the cost of an
//! exhaustive all-pairs join.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::construct::{build, BuildConfig, BuildStats, Variant};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{OrthoGraph, VertexId};
use crate::io;
use crate::metric::Metric;

/// Uniform `[0, 1)` samples from ChaCha8 seeded with `seed`.
///
/// Each value is the top 24 bits of one `u32` draw scaled by `2^-24`, so the
/// output is exactly representable and identical on every platform.
pub fn gen_uniform(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = (0..n * d)
        .map(|_| (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32))
        .collect();
    Dataset::from_flat(d.max(1), flat).expect("n * d values")
}

pub fn scanning_rate(distance_count: u64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "scanning rate needs n >= 2, got {n}"
        )));
    }
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    Ok(distance_count as f64 / pairs)
}

/// Exact neighbors per query, ascending by distance then id.
///
/// Rows may extend past `depth` with ids tied at the depth-th distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    depth: usize,
    ids: Vec<Vec<VertexId>>,
    dists: Vec<Vec<f32>>,
}

impl GroundTruth {
    pub fn from_rows(depth: usize, ids: Vec<Vec<VertexId>>, dists: Vec<Vec<f32>>) -> Result<Self> {
        if ids.len() != dists.len()
            || ids.iter().zip(&dists).any(|(i, d)| i.len() != d.len() || i.len() < depth)
        {
            return Err(Error::InvalidParameter("ragged ground truth".into()));
        }
        Ok(Self { depth, ids, dists })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids of row `i`, including boundary ties.
    pub fn ids(&self, i: usize) -> &[VertexId] {
        &self.ids[i]
    }

    pub fn dists(&self, i: usize) -> &[f32] {
        &self.dists[i]
    }

    /// Top-`depth` ids per row, ties beyond the depth dropped.
    pub fn top_ids(&self) -> Vec<Vec<u64>> {
        self.ids
            .iter()
            .map(|r| r[..self.depth].iter().map(|&v| v as u64).collect())
            .collect()
    }

    pub fn has_boundary_ties(&self) -> bool {
        self.ids.iter().any(|r| r.len() > self.depth)
    }

    /// The ids that count as true top-`k` for row `i`: every id whose
    /// distance does not exceed the `k`-th smallest.
    fn truth_set(&self, i: usize, k: usize) -> &[VertexId] {
        let dists = &self.dists[i];
        let kth = dists[k - 1];
        let end = k + dists[k..].iter().take_while(|&&d| d <= kth).count();
        &self.ids[i][..end]
    }
}

/// Bounded best-`depth` selection that also keeps ties at the boundary.
struct TopK {
    depth: usize,
    best: Vec<(f32, VertexId)>,
    ties: Vec<(f32, VertexId)>,
}

impl TopK {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            best: Vec::with_capacity(depth + 1),
            ties: Vec::new(),
        }
    }

    #[inline]
    fn kth(&self) -> f32 {
        if self.best.len() < self.depth {
            f32::INFINITY
        } else {
            self.best[self.depth - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d: f32, id: VertexId) {
        let kth = self.kth();
        if d > kth {
            return;
        }
        let key = (d, id);
        if self.best.len() == self.depth && key > self.best[self.depth - 1] {
            // Equal distance, larger id: a boundary tie.
            self.ties.push(key);
            return;
        }
        let pos = self.best.partition_point(|&e| e < key);
        self.best.insert(pos, key);
        if self.best.len() > self.depth {
            let out = self.best.pop().unwrap();
            let new_kth = self.best[self.depth - 1].0;
            if new_kth < kth {
                self.ties.clear();
            }
            if out.0 == new_kth {
                self.ties.push(out);
            }
        }
    }

    fn finish(mut self) -> (Vec<VertexId>, Vec<f32>) {
        let kth = self.kth();
        self.ties.retain(|t| t.0 == kth);
        self.ties.sort_by(|a, b| a.partial_cmp(b).unwrap());
        self.best.extend(self.ties);
        self.best.into_iter().map(|(d, v)| (v, d)).unzip()
    }
}

fn scan(
    query: &[f32],
    skip: Option<VertexId>,
    ids: &[VertexId],
    rows: &Dataset,
    metric: Metric,
    depth: usize,
) -> (Vec<VertexId>, Vec<f32>) {
    let mut top = TopK::new(depth);
    for &v in ids {
        if Some(v) == skip {
            continue;
        }
        top.offer(metric.eval(query, rows.row(v as usize)), v);
    }
    top.finish()
}

/// Exact top-`k` by exhaustive scan.
///
/// With `queries = None` every row of `data` is a query and its own row is
/// excluded.
pub fn brute_force_knn(
    data: &Dataset,
    queries: Option<&Dataset>,
    k: usize,
    metric: Metric,
) -> Result<GroundTruth> {
    let ids: Vec<VertexId> = (0..data.len() as VertexId).collect();
    brute_force_over(data, &ids, queries, k, metric)
}

/// Exact top-`k` restricted to the rows named in `ids`.
pub fn brute_force_over(
    data: &Dataset,
    ids: &[VertexId],
    queries: Option<&Dataset>,
    k: usize,
    metric: Metric,
) -> Result<GroundTruth> {
    let n = ids.len();
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    if let Some(q) = queries {
        if q.dim() != data.dim() && !q.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                found: q.dim(),
            });
        }
    }
    let rows: Vec<(Vec<VertexId>, Vec<f32>)> = match queries {
        Some(q) => (0..q.len())
            .into_par_iter()
            .map(|i| scan(q.row(i), None, ids, data, metric, k))
            .collect(),
        None => ids
            .par_iter()
            .map(|&v| scan(data.row(v as usize), Some(v), ids, data, metric, k))
            .collect(),
    };
    let (ids, dists) = rows.into_iter().unzip();
    Ok(GroundTruth {
        depth: k,
        ids,
        dists,
    })
}

/// Exact k-NN of every live vertex among the live vertices of `g`; row `i`
/// belongs to the `i`-th live id.
pub fn graph_ground_truth(g: &OrthoGraph, k: usize) -> Result<GroundTruth> {
    let live: Vec<VertexId> = g.live_ids().collect();
    brute_force_over(g.dataset(), &live, None, k, g.metric())
}

/// Recall of candidate lists against `truth` at depth `k`.
pub fn recall_at_k<L: AsRef<[VertexId]>>(
    candidates: &[L],
    truth: &GroundTruth,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if truth.depth < k {
        return Err(Error::TruthTooShallow {
            depth: truth.depth,
            k,
        });
    }
    if candidates.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "{} candidate lists for {} ground-truth rows",
            candidates.len(),
            truth.len()
        )));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let hits: usize = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = c.as_ref();
            let set = truth.truth_set(i, k);
            let found = c[..c.len().min(k)].iter().filter(|v| set.contains(v)).count();
            found.min(k)
        })
        .sum();
    Ok(hits as f64 / (candidates.len() * k) as f64)
}

/// Graph quality: recall of each live vertex's k-NN list.
pub fn graph_recall(g: &OrthoGraph, truth: &GroundTruth, k: usize) -> Result<f64> {
    let lists: Vec<Vec<VertexId>> = g
        .live_ids()
        .map(|v| g.neighbors(v).iter().map(|e| e.neighbor).collect())
        .collect();
    recall_at_k(&lists, truth, k)
}

/// On-disk ground-truth cache keyed by a content hash.
///
/// Each entry is an id-list file `<hash>.ids` plus `<hash>.ids.sha256`
/// holding the digest of the id file. Distances are recomputed on load.
#[derive(Debug, Clone)]
pub struct TruthCache {
    dir: PathBuf,
}

pub const CACHE_DIR_ENV: &str = "OLLOG_CACHE_DIR";

impl TruthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$OLLOG_CACHE_DIR`, or `ollog-cache` under the system temp dir.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) => Self::new(d),
            None => Self::new(std::env::temp_dir().join("ollog-cache")),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Key covering the candidate rows, the queries, the metric and `k`.
    pub fn key(
        data: &Dataset,
        ids: &[VertexId],
        queries: Option<&Dataset>,
        k: usize,
        metric: Metric,
    ) -> String {
        let mut h = Sha256::new();
        h.update(b"ollog-truth-v1");
        h.update((data.dim() as u64).to_le_bytes());
        h.update([metric.tag()]);
        h.update((k as u64).to_le_bytes());
        h.update((ids.len() as u64).to_le_bytes());
        for &v in ids {
            h.update(v.to_le_bytes());
            for &x in data.row(v as usize) {
                h.update(x.to_le_bytes());
            }
        }
        match queries {
            Some(q) => {
                h.update(b"Q");
                h.update((q.len() as u64).to_le_bytes());
                for &x in q.as_flat() {
                    h.update(x.to_le_bytes());
                }
            }
            None => h.update(b"S"),
        }
        hex::encode(h.finalize())
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let ids = self.dir.join(format!("{key}.ids"));
        let sum = self.dir.join(format!("{key}.ids.sha256"));
        (ids, sum)
    }

    /// Returns the cached truth, or computes and stores it.
    pub fn brute_force(
        &self,
        data: &Dataset,
        ids: &[VertexId],
        queries: Option<&Dataset>,
        k: usize,
        metric: Metric,
    ) -> Result<GroundTruth> {
        let key = Self::key(data, ids, queries, k, metric);
        if let Some(t) = self.load(&key, data, ids, queries, k, metric)? {
            return Ok(t);
        }
        let truth = brute_force_over(data, ids, queries, k, metric)?;
        if truth.has_boundary_ties() {
            log::debug!("ground truth {key} has boundary ties, not cached");
        } else {
            self.store(&key, &truth)?;
        }
        Ok(truth)
    }

    fn load(
        &self,
        key: &str,
        data: &Dataset,
        ids: &[VertexId],
        queries: Option<&Dataset>,
        k: usize,
        metric: Metric,
    ) -> Result<Option<GroundTruth>> {
        let (ids_path, sum_path) = self.paths(key);
        if !ids_path.exists() {
            return Ok(None);
        }
        let corrupt = |reason: String| Error::CacheCorrupt {
            path: ids_path.clone(),
            reason,
        };
        let bytes = fs::read(&ids_path)?;
        let stored = fs::read_to_string(&sum_path)
            .map_err(|e| corrupt(format!("missing digest: {e}")))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if stored.trim() != actual {
            return Err(corrupt(format!(
                "digest mismatch: stored {}, computed {actual}",
                stored.trim()
            )));
        }
        let lists = io::read_ids_from(&bytes[..]).map_err(|e| corrupt(e.to_string()))?;
        let expected_rows = queries.map_or(ids.len(), |q| q.len());
        if lists.len() != expected_rows || lists.iter().any(|l| l.len() != k) {
            return Err(corrupt("shape does not match the request".into()));
        }
        let mut out_ids = Vec::with_capacity(lists.len());
        let mut out_dists = Vec::with_capacity(lists.len());
        for (i, list) in lists.into_iter().enumerate() {
            let q = match queries {
                Some(q) => q.row(i),
                None => data.row(ids[i] as usize),
            };
            let row: Vec<VertexId> = list
                .into_iter()
                .map(|v| {
                    VertexId::try_from(v)
                        .ok()
                        .filter(|&v| (v as usize) < data.len())
                        .ok_or_else(|| corrupt(format!("id {v} out of range")))
                })
                .collect::<Result<_>>()?;
            let dists: Vec<f32> = row
                .iter()
                .map(|&v| metric.eval(q, data.row(v as usize)))
                .collect();
            if dists.windows(2).any(|w| w[0] > w[1]) {
                return Err(corrupt(format!("row {i} is not sorted by distance")));
            }
            out_ids.push(row);
            out_dists.push(dists);
        }
        Ok(Some(GroundTruth {
            depth: k,
            ids: out_ids,
            dists: out_dists,
        }))
    }

    fn store(&self, key: &str, truth: &GroundTruth) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let (ids_path, sum_path) = self.paths(key);
        let mut bytes = Vec::new();
        io::write_ids_to(&mut bytes, &truth.top_ids())?;
        fs::write(&sum_path, hex::encode(Sha256::digest(&bytes)))?;
        fs::write(&ids_path, &bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Uniform { n: usize, d: usize, seed: u64 },
    File(PathBuf),
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Uniform { n, d, .. } => format!("uniform-{n}x{d}"),
            DataSource::File(p) => p
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Uniform { n, d, seed } => Ok(gen_uniform(*n, *d, *seed)),
            DataSource::File(p) => io::read_vecs(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub metric: Metric,
    pub build: BuildConfig,
    /// Recall depths to report; each is capped at `build.k`.
    pub depths: Vec<usize>,
    pub cache: Option<TruthCache>,
    /// CSV file to append one row to.
    pub csv: Option<PathBuf>,
    /// When false, `wall_ms` is reported as 0 so rows are reproducible.
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, metric: Metric, build: BuildConfig) -> Self {
        Self {
            source,
            metric,
            build,
            depths: vec![1, 10],
            cache: None,
            csv: None,
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub n: usize,
    pub d: usize,
    pub metric: Metric,
    pub variant: Variant,
    pub k: usize,
    pub p: usize,
    pub seed: u64,
    pub recall_at: BTreeMap<usize, f64>,
    pub scanning_rate: f64,
    pub distance_count: u64,
    pub wall_ms: u64,
}

pub const CSV_HEADER: &str =
    "dataset,n,d,metric,variant,k,p,seed,scan_rate,recall1,recall10,dist_count,wall_ms";

impl EvalReport {
    /// One CSV row matching [`CSV_HEADER`]; missing recalls are left empty.
    pub fn csv_row(&self) -> String {
        let recall = |k: usize| {
            self.recall_at
                .get(&k)
                .map(|r| r.to_string())
                .unwrap_or_default()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.n,
            self.d,
            self.metric,
            self.variant,
            self.k,
            self.p,
            self.seed,
            self.scanning_rate,
            recall(1),
            recall(10),
            self.distance_count,
            self.wall_ms
        )
    }

    pub fn append_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{CSV_HEADER}")?;
        }
        writeln!(f, "{}", self.csv_row())?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dataset={} n={} d={} metric={} variant={} k={} p={} seed={} scan_rate={} dist_count={}",
            self.dataset,
            self.n,
            self.d,
            self.metric,
            self.variant,
            self.k,
            self.p,
            self.seed,
            self.scanning_rate,
            self.distance_count
        )?;
        for (k, r) in &self.recall_at {
            write!(f, " recall{k}={r}")?;
        }
        write!(f, " wall_ms={}", self.wall_ms)
    }
}

/// Scores an already built graph against exact neighbors.
pub fn evaluate_graph(
    g: &OrthoGraph,
    depths: &[usize],
    cache: Option<&TruthCache>,
) -> Result<BTreeMap<usize, f64>> {
    let depths: Vec<usize> = depths.iter().map(|&d| d.min(g.k())).collect();
    let depth = depths.iter().copied().max().unwrap_or(1);
    let live: Vec<VertexId> = g.live_ids().collect();
    let truth = match cache {
        Some(c) => c.brute_force(g.dataset(), &live, None, depth, g.metric())?,
        None => brute_force_over(g.dataset(), &live, None, depth, g.metric())?,
    };
    depths
        .into_iter()
        .map(|d| Ok((d, graph_recall(g, &truth, d)?)))
        .collect()
}

/// Builds a graph per `cfg`, scores it and optionally appends a CSV row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(EvalReport, OrthoGraph)> {
    let data = cfg.source.load()?;
    let start = Instant::now();
    let (g, stats): (OrthoGraph, BuildStats) = build(&data, cfg.metric, &cfg.build)?;
    let wall_ms = if cfg.record_wall_time {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let recall_at = evaluate_graph(&g, &cfg.depths, cfg.cache.as_ref())?;
    let report = EvalReport {
        dataset: cfg.source.label(),
        n: data.len(),
        d: data.dim(),
        metric: cfg.metric,
        variant: cfg.build.variant,
        k: cfg.build.k,
        p: cfg.build.p,
        seed: cfg.build.rng_seed,
        recall_at,
        scanning_rate: stats.scanning_rate,
        distance_count: stats.distance_count,
        wall_ms,
    };
    if let Some(csv) = &cfg.csv {
        report.append_csv(csv)?;
    }
    Ok((report, g))
}
