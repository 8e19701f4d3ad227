//! Best-first hill climbing over the orthogonal graph.
//!
//! The climb compares the query against `p` random seeds, then repeatedly
//! expands the closest queue entry that has not been expanded yet: every
//! forward and reverse neighbor not already compared is measured and offered
//! to the queue. It stops once every queue entry has been expanded.
//!
//! [`lgd_search`] additionally skips neighbors whose occlusion factor exceeds
//! the mean factor of the vertex being expanded. For a reverse neighbor `n`
//! of `r`, the factor used is the one `r` carries inside the k-NN list of
//! `n`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{OrthoGraph, VertexId};
use crate::metric::DistanceCounter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    /// Number of neighbors to return.
    pub k: usize,
    /// Number of random seeds.
    pub p: usize,
    /// Queue capacity; at least `k`.
    pub breadth: usize,
}

impl SearchParams {
    pub fn new(k: usize) -> Self {
        Self { k, p: k, breadth: k }
    }

    pub fn with_seeds(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_breadth(mut self, breadth: usize) -> Self {
        self.breadth = breadth;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("k and p must be >= 1".into()));
        }
        if self.breadth < self.k {
            return Err(Error::InvalidParameter(format!(
                "breadth {} is smaller than k = {}",
                self.breadth, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `(id, distance)` ascending by distance, ties by id.
    pub neighbors: Vec<(VertexId, f32)>,
    /// Number of vertices whose neighborhoods were expanded.
    pub visited_count: usize,
    /// Number of metric evaluations.
    pub distance_count: u64,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<VertexId> {
        self.neighbors.iter().map(|&(v, _)| v).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f32,
    id: VertexId,
    expanded: bool,
}

impl Candidate {
    #[inline]
    fn precedes(&self, dist: f32, id: VertexId) -> bool {
        self.dist < dist || (self.dist == dist && self.id < id)
    }
}

/// Fixed-capacity sorted queue with a cursor on the first unexpanded entry.
#[derive(Debug, Clone, Default)]
struct CandidateQueue {
    items: Vec<Candidate>,
    capacity: usize,
    cursor: usize,
}

impl CandidateQueue {
    fn reset(&mut self, capacity: usize) {
        self.items.clear();
        self.items.reserve(capacity + 1);
        self.capacity = capacity;
        self.cursor = 0;
    }

    fn insert(&mut self, id: VertexId, dist: f32) -> bool {
        if self.items.len() == self.capacity {
            match self.items.last() {
                Some(last) if last.precedes(dist, id) => return false,
                _ => {}
            }
        }
        let pos = self.items.partition_point(|c| c.precedes(dist, id));
        self.items.insert(
            pos,
            Candidate {
                dist,
                id,
                expanded: false,
            },
        );
        if self.items.len() > self.capacity {
            self.items.pop();
        }
        if pos < self.cursor {
            self.cursor = pos;
        }
        true
    }

    fn next_unexpanded(&mut self) -> Option<VertexId> {
        while let Some(c) = self.items.get_mut(self.cursor) {
            self.cursor += 1;
            if !c.expanded {
                c.expanded = true;
                return Some(c.id);
            }
        }
        None
    }
}

/// Per-searcher working memory, reusable across queries.
///
/// Visited flags and the distance cache are version-stamped, so starting a
/// new query costs O(1) rather than O(n).
#[derive(Debug, Clone, Default)]
pub struct SearchScratch {
    epoch: u32,
    stamp: Vec<u32>,
    dcache: Vec<f32>,
    queue: CandidateQueue,
    touched: Vec<VertexId>,
    buf: Vec<VertexId>,
    counter: DistanceCounter,
    expansions: usize,
}

impl SearchScratch {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn begin(&mut self, id_bound: usize, breadth: usize) {
        if self.stamp.len() < id_bound {
            self.stamp.resize(id_bound, 0);
            self.dcache.resize(id_bound, f32::INFINITY);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.queue.reset(breadth);
        self.touched.clear();
        self.counter.reset();
        self.expansions = 0;
    }

    /// Distance to the current query if it has been computed, else infinity.
    #[inline]
    pub fn cached(&self, v: VertexId) -> f32 {
        let i = v as usize;
        if i < self.stamp.len() && self.stamp[i] == self.epoch {
            self.dcache[i]
        } else {
            f32::INFINITY
        }
    }

    #[inline]
    pub fn is_compared(&self, v: VertexId) -> bool {
        let i = v as usize;
        i < self.stamp.len() && self.stamp[i] == self.epoch
    }

    #[inline]
    pub(crate) fn record(&mut self, v: VertexId, d: f32) {
        let i = v as usize;
        if i >= self.stamp.len() {
            self.stamp.resize(i + 1, 0);
            self.dcache.resize(i + 1, f32::INFINITY);
        }
        self.stamp[i] = self.epoch;
        self.dcache[i] = d;
        self.touched.push(v);
    }

    /// Vertices compared to the current query, in comparison order.
    pub fn compared(&self) -> &[VertexId] {
        &self.touched
    }

    pub fn distance_count(&self) -> u64 {
        self.counter.count()
    }

    pub(crate) fn counter_mut(&mut self) -> &mut DistanceCounter {
        &mut self.counter
    }

    /// Current queue contents, best first.
    pub(crate) fn queue_entries(&self) -> impl Iterator<Item = (VertexId, f32)> + '_ {
        self.queue.items.iter().map(|c| (c.id, c.dist))
    }

    fn result(&self, k: usize) -> SearchResult {
        SearchResult {
            neighbors: self.queue_entries().take(k).collect(),
            visited_count: self.expansions,
            distance_count: self.counter.count(),
        }
    }
}

/// Hooks the climb calls on the graph being searched.
pub(crate) trait Expander {
    fn graph(&self) -> &OrthoGraph;

    /// Called after each new comparison of the query with `v`.
    fn on_compare(&mut self, _v: VertexId, _dist: f32) {}
}

impl Expander for &OrthoGraph {
    fn graph(&self) -> &OrthoGraph {
        self
    }
}

/// Runs one climb to convergence; results are left in `scratch`.
///
/// `exclude` is never compared (the query's own vertex during construction).
pub(crate) fn climb<E: Expander>(
    ex: &mut E,
    query: &[f32],
    seeds: &[VertexId],
    lgd_filter: bool,
    exclude: Option<VertexId>,
    scratch: &mut SearchScratch,
) {
    let metric = ex.graph().metric();
    for &s in seeds {
        if Some(s) != exclude {
            compare(ex, query, s, metric, scratch);
        }
    }
    let mut buf = std::mem::take(&mut scratch.buf);
    while let Some(r) = scratch.queue.next_unexpanded() {
        scratch.expansions += 1;
        buf.clear();
        collect_expansion(ex.graph(), r, lgd_filter, scratch, &mut buf);
        for &v in &buf {
            if Some(v) != exclude {
                compare(ex, query, v, metric, scratch);
            }
        }
    }
    scratch.buf = buf;
}

#[inline]
fn compare<E: Expander>(
    ex: &mut E,
    query: &[f32],
    v: VertexId,
    metric: crate::metric::Metric,
    scratch: &mut SearchScratch,
) {
    if scratch.is_compared(v) {
        return;
    }
    let d = scratch.counter.eval(metric, query, ex.graph().vector(v));
    scratch.record(v, d);
    scratch.queue.insert(v, d);
    ex.on_compare(v, d);
}

fn collect_expansion(
    g: &OrthoGraph,
    r: VertexId,
    lgd_filter: bool,
    scratch: &SearchScratch,
    out: &mut Vec<VertexId>,
) {
    let forward = g.neighbors(r);
    let reverse = g.reverse_for_search(r);
    if !lgd_filter {
        out.extend(
            forward
                .iter()
                .map(|e| e.neighbor)
                .chain(reverse.iter().copied())
                .filter(|&v| !scratch.is_compared(v)),
        );
        return;
    }
    let threshold = g.mean_lambda(r);
    let mut passed = 0usize;
    let mut lowest: Option<(u32, VertexId)> = None;
    let mut consider = |v: VertexId, lambda: u32, out: &mut Vec<VertexId>| {
        if lambda as f64 <= threshold {
            passed += 1;
            if !scratch.is_compared(v) {
                out.push(v);
            }
        } else if lowest.is_none_or(|(l, _)| lambda < l) {
            lowest = Some((lambda, v));
        }
    };
    for e in forward {
        consider(e.neighbor, e.lambda, out);
    }
    for &n in reverse {
        let lambda = g.lambda_in(n, r).unwrap_or(0);
        consider(n, lambda, out);
    }
    // Never let the filter turn a non-empty neighborhood into a dead end.
    if passed == 0 {
        if let Some((_, v)) = lowest {
            if !scratch.is_compared(v) {
                out.push(v);
            }
        }
    }
}

/// Draws up to `p` distinct seeds uniformly from the graph's seed pool.
pub(crate) fn draw_seeds<R: Rng + ?Sized>(
    g: &OrthoGraph,
    p: usize,
    rng: &mut R,
    out: &mut Vec<VertexId>,
) {
    out.clear();
    let pool = g.seed_pool();
    if p >= pool.len() {
        out.extend_from_slice(pool);
    } else {
        out.extend(
            rand::seq::index::sample(rng, pool.len(), p)
                .into_iter()
                .map(|i| pool[i]),
        );
    }
}

fn search<R: Rng + ?Sized>(
    g: &OrthoGraph,
    query: &[f32],
    params: SearchParams,
    rng: &mut R,
    scratch: &mut SearchScratch,
    lgd_filter: bool,
) -> Result<SearchResult> {
    params.validate()?;
    if query.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: query.len(),
        });
    }
    g.metric().validate(query)?;
    if g.seed_pool().is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut seeds = Vec::with_capacity(params.p);
    draw_seeds(g, params.p, rng, &mut seeds);
    scratch.begin(g.id_bound(), params.breadth);
    let mut ex = g;
    climb(&mut ex, query, &seeds, lgd_filter, None, scratch);
    Ok(scratch.result(params.k))
}

/// Enhanced hill-climbing search over forward and reverse neighbors.
pub fn ehc_search<R: Rng + ?Sized>(
    g: &OrthoGraph,
    query: &[f32],
    params: SearchParams,
    rng: &mut R,
    scratch: &mut SearchScratch,
) -> Result<SearchResult> {
    search(g, query, params, rng, scratch, false)
}

/// Hill-climbing search that skips heavily occluded neighbors.
pub fn lgd_search<R: Rng + ?Sized>(
    g: &OrthoGraph,
    query: &[f32],
    params: SearchParams,
    rng: &mut R,
    scratch: &mut SearchScratch,
) -> Result<SearchResult> {
    search(g, query, params, rng, scratch, true)
}
