//! Exhaustive reference neighbors, independent of the library's metric code.

#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use ollog::{Dataset, Metric, OrthoGraph, VertexId};
use sha2::{Digest, Sha256};

pub fn dist(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
    let pairs = a.iter().zip(b).map(|(&x, &y)| (x as f64, y as f64));
    match metric {
        Metric::L1 => pairs.map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in pairs {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
        }
        Metric::ChiSquare => pairs
            .map(|(x, y)| if x + y == 0.0 { 0.0 } else { (x - y) * (x - y) / (x + y) })
            .sum(),
    }
}

/// Reference answer for one query: ascending `(distance, id)`.
#[derive(Debug, Clone)]
pub struct Row {
    pub ids: Vec<VertexId>,
    pub dists: Vec<f64>,
}

impl Row {
    /// Every id at or within the `k`-th smallest distance.
    pub fn truth(&self, k: usize) -> &[VertexId] {
        let kth = self.dists[k - 1];
        let end = self.dists.iter().take_while(|&&d| d <= kth * (1.0 + 1e-6)).count();
        &self.ids[..end]
    }
}

/// `depth` nearest rows of `data` for `query`, skipping `skip`, keeping
/// ties with the last kept distance.
pub fn knn_row(data: &Dataset, ids: &[VertexId], query: &[f32], skip: Option<VertexId>, metric: Metric, depth: usize) -> Row {
    let mut best: Vec<(f64, VertexId)> = Vec::with_capacity(4 * depth + 17);
    let mut bound = f64::INFINITY;
    for &j in ids {
        if Some(j) == skip {
            continue;
        }
        let d = dist(metric, query, data.row(j as usize));
        if d > bound {
            continue;
        }
        best.push((d, j));
        if best.len() > 4 * depth + 16 {
            best.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bound = best[depth - 1].0 * (1.0 + 1e-6);
            best.retain(|e| e.0 <= bound);
        }
    }
    best.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if best.len() > depth {
        let kth = best[depth - 1].0;
        best.retain(|e| e.0 <= kth * (1.0 + 1e-6));
    }
    Row {
        ids: best.iter().map(|e| e.1).collect(),
        dists: best.iter().map(|e| e.0).collect(),
    }
}

/// Exact neighbors of every row among all other rows.
pub fn self_join(data: &Dataset, metric: Metric, depth: usize) -> Vec<Row> {
    let ids: Vec<VertexId> = (0..data.len() as VertexId).collect();
    ids.iter()
        .map(|&i| knn_row(data, &ids, data.row(i as usize), Some(i), metric, depth))
        .collect()
}

/// Exact neighbors of each live vertex among live vertices, in live-id order.
pub fn graph_join(g: &OrthoGraph, depth: usize) -> Vec<Row> {
    let live: Vec<VertexId> = g.live_ids().collect();
    live.iter()
        .map(|&i| knn_row(g.dataset(), &live, g.vector(i), Some(i), g.metric(), depth))
        .collect()
}

pub fn queries(data: &Dataset, qs: &Dataset, metric: Metric, depth: usize) -> Vec<Row> {
    let ids: Vec<VertexId> = (0..data.len() as VertexId).collect();
    qs.rows()
        .map(|q| knn_row(data, &ids, q, None, metric, depth))
        .collect()
}

/// Mean fraction of each row's true top-`k` found among the first `k`
/// candidates.
pub fn recall<L: AsRef<[VertexId]>>(candidates: &[L], truth: &[Row], k: usize) -> f64 {
    assert_eq!(candidates.len(), truth.len());
    let mut hits = 0usize;
    for (c, t) in candidates.iter().zip(truth) {
        let c = c.as_ref();
        let set = t.truth(k);
        hits += c.iter().take(k).filter(|v| set.contains(v)).count().min(k);
    }
    hits as f64 / (truth.len() * k) as f64
}

pub fn graph_lists(g: &OrthoGraph) -> Vec<Vec<VertexId>> {
    g.live_ids()
        .map(|v| g.neighbors(v).iter().map(|e| e.neighbor).collect())
        .collect()
}

pub fn graph_recall(g: &OrthoGraph, truth: &[Row], k: usize) -> f64 {
    recall(&graph_lists(g), truth, k)
}

fn cache_dir() -> PathBuf {
    std::env::var_os("OLLOG_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("oracle"))
}

/// [`self_join`] memoized on disk under `name`. Ids are stored with a
/// digest; distances are recomputed on load.
pub fn self_join_cached(name: &str, data: &Dataset, metric: Metric, depth: usize) -> Vec<Row> {
    let dir = cache_dir();
    let path = dir.join(format!("{name}-{metric}-k{depth}.ids"));
    let sum_path = path.with_extension("ids.sha256");
    if let (Ok(bytes), Ok(sum)) = (fs::read(&path), fs::read_to_string(&sum_path)) {
        if hex::encode(Sha256::digest(&bytes)) == sum.trim() {
            if let Ok(lists) = ollog::io::read_ids_from(&bytes[..]) {
                if lists.len() == data.len() {
                    return lists
                        .into_iter()
                        .enumerate()
                        .map(|(i, l)| {
                            let ids: Vec<VertexId> = l.into_iter().map(|v| v as VertexId).collect();
                            let dists = ids
                                .iter()
                                .map(|&j| dist(metric, data.row(i), data.row(j as usize)))
                                .collect();
                            Row { ids, dists }
                        })
                        .collect();
                }
            }
        }
    }
    let rows = self_join(data, metric, depth);
    let lists: Vec<Vec<u64>> = rows
        .iter()
        .map(|r| r.ids[..depth].iter().map(|&v| v as u64).collect())
        .collect();
    let mut bytes = Vec::new();
    ollog::io::write_ids_to(&mut bytes, &lists).unwrap();
    fs::create_dir_all(&dir).unwrap();
    fs::write(&path, &bytes).unwrap();
    fs::write(&sum_path, hex::encode(Sha256::digest(&bytes))).unwrap();
    rows
}
