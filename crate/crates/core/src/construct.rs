//! Online k-NN graph construction.
//!
//! A small prefix of the data is joined exhaustively; every later sample is
//! then used as a query against the graph built so far and spliced into it.
//! Three variants are provided:
//!
//! * [`Variant::Olg`]: every vertex compared during the climb receives the
//!   new sample immediately through a plain sorted insert.
//! * [`Variant::Lgd`]: the climb skips heavily occluded neighbors and only
//!   records distances; once it converges, the sample is inserted into the
//!   lists of all compared vertices and occlusion factors are refreshed from
//!   the recorded distances.
//! * [`Variant::LgdPlus`]: LGD followed by restricted recursive neighborhood
//!   propagation, which introduces the sample to uncompared members of the
//!   lists it just entered, recursing only through vertices whose k-th
//!   neighbor is farther away than the sample.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::scanning_rate;
use crate::graph::{OrthoGraph, VertexId};
use crate::metric::{DistanceCounter, Metric};
use crate::search::{climb, draw_seeds, Expander, SearchScratch};

pub const DEFAULT_BOOTSTRAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Olg,
    Lgd,
    LgdPlus,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Olg => "olg",
            Variant::Lgd => "lgd",
            Variant::LgdPlus => "lgd+",
        }
    }

    fn uses_lgd(self) -> bool {
        !matches!(self, Variant::Olg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "olg" => Ok(Variant::Olg),
            "lgd" => Ok(Variant::Lgd),
            "lgd+" | "lgdplus" | "lgd-plus" => Ok(Variant::LgdPlus),
            other => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildConfig {
    pub k: usize,
    pub p: usize,
    pub bootstrap_size: usize,
    pub variant: Variant,
    /// `None` propagates until no new vertex is met.
    pub r2np_max_depth: Option<usize>,
    /// Visit each neighborhood in random order instead of by rank.
    pub r2np_shuffle: bool,
    pub rng_seed: u64,
}

impl BuildConfig {
    /// `k` neighbors, `p = k` seeds, default bootstrap, LGD+.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            p: k,
            bootstrap_size: DEFAULT_BOOTSTRAP,
            variant: Variant::LgdPlus,
            r2np_max_depth: None,
            r2np_shuffle: false,
            rng_seed: 0,
        }
    }

    pub fn variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn seeds(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn bootstrap(mut self, size: usize) -> Self {
        self.bootstrap_size = size;
        self
    }

    pub fn rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be >= 1".into()));
        }
        if self.bootstrap_size < self.k + 1 {
            return Err(Error::KTooLarge {
                k: self.k,
                n: self.bootstrap_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub distance_count: u64,
    pub scanning_rate: f64,
    pub inserted: usize,
    pub r2np_visits: u64,
}

impl fmt::Display for BuildStats {
    /// One machine-readable `key=value` record.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "distance_count={} scanning_rate={} inserted={} r2np_visits={}",
            self.distance_count, self.scanning_rate, self.inserted, self.r2np_visits
        )
    }
}

/// Exact k-NN graph over the first `min(bootstrap_size, n)` rows.
pub fn bootstrap(data: &Dataset, metric: Metric, cfg: &BuildConfig) -> Result<OrthoGraph> {
    Ok(GraphBuilder::bootstrap(data, metric, cfg.clone())?.into_graph())
}

/// Builds with [`Variant::Olg`].
pub fn olg_build(
    data: &Dataset,
    metric: Metric,
    cfg: &BuildConfig,
) -> Result<(OrthoGraph, BuildStats)> {
    if cfg.variant != Variant::Olg {
        return Err(Error::InvalidParameter(format!(
            "olg_build called with variant {}",
            cfg.variant
        )));
    }
    build(data, metric, cfg)
}

/// Builds with [`Variant::Lgd`] or [`Variant::LgdPlus`].
pub fn lgd_build(
    data: &Dataset,
    metric: Metric,
    cfg: &BuildConfig,
) -> Result<(OrthoGraph, BuildStats)> {
    if !cfg.variant.uses_lgd() {
        return Err(Error::InvalidParameter(format!(
            "lgd_build called with variant {}",
            cfg.variant
        )));
    }
    build(data, metric, cfg)
}

/// Builds a graph over all rows of `data` with the configured variant.
pub fn build(data: &Dataset, metric: Metric, cfg: &BuildConfig) -> Result<(OrthoGraph, BuildStats)> {
    let mut builder = GraphBuilder::bootstrap(data, metric, cfg.clone())?;
    let start = builder.graph.id_bound();
    builder.graph.reserve(data.len() - start);
    for row in data.rows().skip(start) {
        builder.insert_sample(row)?;
    }
    let stats = builder.stats();
    Ok((builder.into_graph(), stats))
}

/// A graph together with the state needed to keep growing or shrinking it.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: OrthoGraph,
    cfg: BuildConfig,
    rng: ChaCha8Rng,
    scratch: SearchScratch,
    seeds: Vec<VertexId>,
    entered: Vec<VertexId>,
    query: Vec<f32>,
    distance_count: u64,
    inserted: usize,
    r2np_visits: u64,
}

impl GraphBuilder {
    /// Joins the first `min(cfg.bootstrap_size, n)` rows exhaustively.
    pub fn bootstrap(data: &Dataset, metric: Metric, cfg: BuildConfig) -> Result<Self> {
        cfg.validate()?;
        let n = data.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 points, got {n}"
            )));
        }
        let m = cfg.bootstrap_size.min(n);
        if cfg.k >= m {
            return Err(Error::KTooLarge { k: cfg.k, n: m });
        }
        let mut graph = OrthoGraph::new(data.dim(), cfg.k, metric)?;
        graph.reserve(m);
        for row in data.rows().take(m) {
            let v = graph.add_vertex(row)?;
            graph.publish(v);
        }
        let mut counter = DistanceCounter::new();
        for i in 0..m as VertexId {
            for j in i + 1..m as VertexId {
                let d = counter.eval(metric, graph.vector(i), graph.vector(j));
                graph.insert_edge(i, j, d)?;
                graph.insert_edge(j, i, d)?;
            }
        }
        if let Some(id) = estimate_intrinsic_dim(&graph) {
            if (cfg.k as f64) < id {
                log::warn!(
                    "k = {} is below the estimated intrinsic dimension {:.1}; graph quality may suffer",
                    cfg.k,
                    id
                );
            }
        }
        let mut b = Self::from_graph(graph, cfg);
        b.distance_count = counter.count();
        b.inserted = m;
        Ok(b)
    }

    /// Wraps an existing graph, e.g. one loaded from disk.
    pub fn from_graph(graph: OrthoGraph, cfg: BuildConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Self {
            graph,
            cfg,
            rng,
            scratch: SearchScratch::new(),
            seeds: Vec::new(),
            entered: Vec::new(),
            query: Vec::new(),
            distance_count: 0,
            inserted: 0,
            r2np_visits: 0,
        }
    }

    pub fn graph(&self) -> &OrthoGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut OrthoGraph {
        &mut self.graph
    }

    pub fn into_graph(self) -> OrthoGraph {
        self.graph
    }

    pub fn config(&self) -> &BuildConfig {
        &self.cfg
    }

    pub fn stats(&self) -> BuildStats {
        let n = self.graph.live_count();
        BuildStats {
            distance_count: self.distance_count,
            scanning_rate: scanning_rate(self.distance_count, n).unwrap_or(0.0),
            inserted: self.inserted,
            r2np_visits: self.r2np_visits,
        }
    }

    /// Integrates one new sample and returns its id.
    pub fn insert_sample(&mut self, v: &[f32]) -> Result<VertexId> {
        if self.graph.is_frozen() {
            return Err(Error::Frozen);
        }
        draw_seeds(&self.graph, self.cfg.p, &mut self.rng, &mut self.seeds);
        let q = self.graph.add_vertex(v)?;
        self.inserted += 1;
        if self.seeds.is_empty() {
            self.graph.publish(q);
            return Ok(q);
        }
        self.query.clear();
        self.query.extend_from_slice(v);
        self.scratch.begin(self.graph.id_bound(), self.cfg.k);

        if self.cfg.variant.uses_lgd() {
            let mut ex = &self.graph;
            climb(&mut ex, &self.query, &self.seeds, true, Some(q), &mut self.scratch);
            self.entered.clear();
            let scratch = &self.scratch;
            for &r in scratch.compared() {
                let d = scratch.cached(r);
                if self.graph.update_with_lgd(r, q, d, |x| scratch.cached(x))? {
                    self.entered.push(r);
                }
            }
        } else {
            let mut ex = OlgExpander {
                graph: &mut self.graph,
                q,
            };
            climb(&mut ex, &self.query, &self.seeds, false, Some(q), &mut self.scratch);
        }

        let own: Vec<(VertexId, f32)> = self.scratch.queue_entries().collect();
        for (r, d) in own {
            self.graph.insert_edge(q, r, d)?;
        }

        if self.cfg.variant == Variant::LgdPlus {
            let shuffle = if self.cfg.r2np_shuffle {
                Some(&mut self.rng)
            } else {
                None
            };
            let entered = std::mem::take(&mut self.entered);
            let visits = r2np_propagate(
                &mut self.graph,
                q,
                &self.query,
                &entered,
                self.cfg.r2np_max_depth,
                shuffle,
                &mut self.scratch,
            )?;
            self.entered = entered;
            self.r2np_visits += visits;
        }

        self.distance_count += self.scratch.distance_count();
        self.graph.publish(q);
        Ok(q)
    }

    /// Removes `s`, updating occlusion factors of the lists it leaves.
    pub fn remove_sample(&mut self, s: VertexId) -> Result<usize> {
        let mut counter = DistanceCounter::new();
        let dropped = self.graph.remove_sample(s, &mut counter)?;
        self.distance_count += counter.count();
        Ok(dropped)
    }

    /// Removes `s`, then refills the lists that lost it by searching for
    /// their owners. Returns the number of edges dropped and added.
    pub fn remove_and_repair(&mut self, s: VertexId) -> Result<(usize, usize)> {
        let owners = self.graph.owners_of(s).to_vec();
        let dropped = self.remove_sample(s)?;
        let added = self.repair(&owners)?;
        Ok((dropped, added))
    }

    /// Re-queries each live owner with a short list and inserts what it
    /// finds. Returns the number of edges added.
    pub fn repair(&mut self, owners: &[VertexId]) -> Result<usize> {
        let mut added = 0;
        for &o in owners {
            if !self.graph.is_live(o) || self.graph.neighbors(o).len() >= self.cfg.k {
                continue;
            }
            draw_seeds(&self.graph, self.cfg.p, &mut self.rng, &mut self.seeds);
            self.query.clear();
            self.query.extend_from_slice(self.graph.vector(o));
            self.scratch.begin(self.graph.id_bound(), self.cfg.k);
            let mut ex = &self.graph;
            climb(&mut ex, &self.query, &self.seeds, false, Some(o), &mut self.scratch);
            let found: Vec<(VertexId, f32)> = self.scratch.queue_entries().collect();
            for (r, d) in found {
                if self.graph.insert_edge(o, r, d)? {
                    added += 1;
                }
            }
            self.distance_count += self.scratch.distance_count();
        }
        Ok(added)
    }
}

struct OlgExpander<'a> {
    graph: &'a mut OrthoGraph,
    q: VertexId,
}

impl Expander for OlgExpander<'_> {
    fn graph(&self) -> &OrthoGraph {
        self.graph
    }

    fn on_compare(&mut self, v: VertexId, dist: f32) {
        // Both endpoints are live and distinct; the insert cannot fail.
        let _ = self.graph.insert_edge(v, self.q, dist);
    }
}

/// Restricted recursive neighborhood propagation for a freshly inserted `q`.
///
/// Starting from the lists `q` entered (`entry_points`), each member not yet
/// compared to `q` is measured and `q` and it are inserted into each other's
/// lists; the member's own list is explored next only if `q` is closer to it
/// than its current k-th neighbor. `scratch` must still hold the distance
/// cache of `q`'s climb. Returns the number of new comparisons.
pub fn r2np_propagate(
    graph: &mut OrthoGraph,
    q: VertexId,
    query: &[f32],
    entry_points: &[VertexId],
    max_depth: Option<usize>,
    mut shuffle: Option<&mut ChaCha8Rng>,
    scratch: &mut SearchScratch,
) -> Result<u64> {
    let metric = graph.metric();
    let k = graph.k();
    let mut visits = 0u64;
    let mut frontier: VecDeque<(VertexId, usize)> =
        entry_points.iter().map(|&r| (r, 0)).collect();
    let mut cands = Vec::new();
    while let Some((r, depth)) = frontier.pop_front() {
        if max_depth.is_some_and(|max| depth >= max) {
            continue;
        }
        cands.clear();
        cands.extend(
            graph
                .neighbors(r)
                .iter()
                .map(|e| e.neighbor)
                .filter(|&p| p != q && !scratch.is_compared(p)),
        );
        if let Some(rng) = shuffle.as_deref_mut() {
            cands.shuffle(rng);
        }
        for &p in &cands {
            if scratch.is_compared(p) {
                continue;
            }
            let d = scratch.counter_mut().eval(metric, query, graph.vector(p));
            scratch.record(p, d);
            visits += 1;
            let list = graph.neighbors(p);
            let kth = if list.len() < k {
                f32::INFINITY
            } else {
                list[k - 1].dist
            };
            let s = &*scratch;
            graph.update_with_lgd(p, q, d, |x| s.cached(x))?;
            graph.insert_edge(q, p, d)?;
            if d < kth {
                frontier.push_back((p, depth + 1));
            }
        }
    }
    Ok(visits)
}

/// Maximum-likelihood intrinsic dimension estimate from each vertex's
/// k-NN distances, averaged over vertices with a full, non-degenerate list.
pub fn estimate_intrinsic_dim(graph: &OrthoGraph) -> Option<f64> {
    let k = graph.k();
    if k < 3 {
        return None;
    }
    let mut inv_sum = 0.0;
    let mut count = 0usize;
    for v in graph.live_ids() {
        let list = graph.neighbors(v);
        if list.len() < k {
            continue;
        }
        let tk = list[k - 1].dist as f64;
        if list[0].dist <= 0.0 || tk <= 0.0 {
            continue;
        }
        let s: f64 = list[..k - 1]
            .iter()
            .map(|e| (tk / e.dist as f64).ln())
            .sum();
        if s > 0.0 {
            inv_sum += s / (k - 1) as f64;
            count += 1;
        }
    }
    (count > 0 && inv_sum > 0.0).then(|| count as f64 / inv_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::gen_uniform;

    fn line(points: &[f32]) -> Dataset {
        Dataset::from_flat(1, points.to_vec()).unwrap()
    }

    fn ids(g: &OrthoGraph, v: VertexId) -> Vec<VertexId> {
        g.neighbors(v).iter().map(|e| e.neighbor).collect()
    }

    #[test]
    fn bootstrap_three_points_on_a_line() {
        let cfg = BuildConfig::new(1).bootstrap(256);
        let g = bootstrap(&line(&[0.0, 1.0, 3.0]), Metric::L1, &cfg).unwrap();
        assert_eq!(ids(&g, 0), vec![1]);
        assert_eq!(ids(&g, 1), vec![0]);
        assert_eq!(ids(&g, 2), vec![1]);
        assert_eq!(g.reverse(1), &[0, 2]);
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn bootstrap_pair() {
        let g = bootstrap(&line(&[0.0, 2.0]), Metric::L2, &BuildConfig::new(1)).unwrap();
        assert_eq!(ids(&g, 0), vec![1]);
        assert_eq!(ids(&g, 1), vec![0]);
        assert_eq!(g.reverse(0), &[1]);
        assert_eq!(g.reverse(1), &[0]);
    }

    #[test]
    fn bootstrap_errors() {
        let cfg = BuildConfig::new(1);
        assert!(matches!(
            bootstrap(&line(&[0.0]), Metric::L2, &cfg),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            bootstrap(&line(&[0.0, 1.0]), Metric::L2, &BuildConfig::new(2)),
            Err(Error::KTooLarge { k: 2, n: 2 })
        ));
        assert!(matches!(
            BuildConfig::new(8).bootstrap(8).validate(),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn variant_guards() {
        let data = gen_uniform(20, 2, 1);
        let cfg = BuildConfig::new(3).variant(Variant::Lgd);
        assert!(olg_build(&data, Metric::L2, &cfg).is_err());
        let cfg = BuildConfig::new(3).variant(Variant::Olg);
        assert!(lgd_build(&data, Metric::L2, &cfg).is_err());
        assert_eq!("lgd+".parse::<Variant>().unwrap(), Variant::LgdPlus);
    }

    #[test]
    fn bootstrap_only_build_equals_bootstrap() {
        let data = gen_uniform(256, 4, 5);
        let cfg = BuildConfig::new(8).variant(Variant::Olg);
        let (g, stats) = olg_build(&data, Metric::L2, &cfg).unwrap();
        let b = bootstrap(&data, Metric::L2, &cfg).unwrap();
        for v in 0..256 {
            assert_eq!(g.neighbors(v), b.neighbors(v));
        }
        assert_eq!(stats.distance_count, 256 * 255 / 2);
        assert_eq!(stats.scanning_rate, 1.0);
    }

    #[test]
    fn insert_into_bootstrap_graph_is_first_online_step() {
        let data = gen_uniform(257, 3, 11);
        for variant in [Variant::Olg, Variant::Lgd, Variant::LgdPlus] {
            let cfg = BuildConfig::new(6).variant(variant).rng_seed(4);
            let (batch, _) = build(&data, Metric::L2, &cfg).unwrap();
            let mut b = GraphBuilder::bootstrap(&data.head(256), Metric::L2, cfg).unwrap();
            b.insert_sample(data.row(256)).unwrap();
            let g = b.graph();
            for v in 0..257 {
                assert_eq!(g.neighbors(v), batch.neighbors(v));
            }
        }
    }

    #[test]
    fn every_sample_gets_a_list_and_graph_stays_consistent() {
        let data = gen_uniform(1500, 5, 2);
        for variant in [Variant::Olg, Variant::Lgd, Variant::LgdPlus] {
            let cfg = BuildConfig::new(8).variant(variant).rng_seed(9);
            let (g, stats) = build(&data, Metric::L2, &cfg).unwrap();
            assert!(g.check_consistency().is_empty());
            assert!(g.live_ids().all(|v| !g.neighbors(v).is_empty()));
            assert_eq!(stats.inserted, 1500);
            assert!(stats.scanning_rate > 0.0 && stats.scanning_rate < 1.0);
            if variant == Variant::LgdPlus {
                assert!(stats.r2np_visits > 0);
            } else {
                assert_eq!(stats.r2np_visits, 0);
            }
        }
    }

    #[test]
    fn duplicate_insert_finds_original_at_zero() {
        let data = gen_uniform(600, 4, 3);
        let cfg = BuildConfig::new(10).rng_seed(1);
        let (g, _) = build(&data, Metric::L2, &cfg).unwrap();
        let mut b = GraphBuilder::from_graph(g, cfg);
        let q = b.insert_sample(data.row(417)).unwrap();
        let first = b.graph().neighbors(q)[0];
        assert_eq!((first.neighbor, first.dist), (417, 0.0));
    }

    #[test]
    fn frozen_graph_rejects_inserts() {
        let data = gen_uniform(300, 2, 3);
        let (mut g, _) = build(&data, Metric::L2, &BuildConfig::new(4)).unwrap();
        g.freeze();
        let mut b = GraphBuilder::from_graph(g, BuildConfig::new(4));
        assert!(matches!(b.insert_sample(&[0.5, 0.5]), Err(Error::Frozen)));
        assert!(matches!(b.remove_sample(3), Err(Error::Frozen)));
    }

    #[test]
    fn identical_seed_gives_identical_builds() {
        let data = gen_uniform(2000, 6, 8);
        let cfg = BuildConfig::new(8).rng_seed(77);
        let (a, sa) = build(&data, Metric::L1, &cfg).unwrap();
        let (b, sb) = build(&data, Metric::L1, &cfg).unwrap();
        assert_eq!(sa, sb);
        for v in a.live_ids() {
            assert_eq!(a.neighbors(v), b.neighbors(v));
        }
    }

    #[test]
    fn repair_refills_shrunk_lists() {
        let data = gen_uniform(800, 3, 21);
        let cfg = BuildConfig::new(6).rng_seed(2);
        let (g, _) = build(&data, Metric::L2, &cfg).unwrap();
        let mut b = GraphBuilder::from_graph(g, cfg);
        let owners = b.graph().owners_of(500).to_vec();
        assert!(!owners.is_empty());
        let (dropped, added) = b.remove_and_repair(500).unwrap();
        assert!(dropped >= owners.len());
        assert!(added > 0);
        for o in owners {
            assert_eq!(b.graph().neighbors(o).len(), 6);
        }
        assert!(b.graph().check_consistency().is_empty());
    }

    /// Hand-built propagation chain r -> p1 -> p2 on a line, k = 2.
    ///
    /// r = 0, p1 = 1, p2 = 2, plus fillers at 10 and 2.2 so p1's list is
    /// [p2 @ 1.0, filler @ 1.2]. The query sits at `q_pos`.
    fn chain(q_pos: f32) -> (OrthoGraph, VertexId, Vec<f32>) {
        let mut g = OrthoGraph::new(1, 2, Metric::L1).unwrap();
        for x in [0.0, 1.0, 2.0, 10.0, 2.2] {
            let v = g.add_vertex(&[x]).unwrap();
            g.publish(v);
        }
        let (r, p1, p2, far, near_p2) = (0, 1, 2, 3, 4);
        let mut link = |a: VertexId, b: VertexId| {
            let d = Metric::L1.eval(g.vector(a), g.vector(b));
            g.insert_edge(a, b, d).unwrap();
        };
        link(r, p1);
        link(r, far);
        link(p1, p2);
        link(p1, near_p2);
        link(p2, p1);
        link(p2, far);
        let q = g.add_vertex(&[q_pos]).unwrap();
        (g, q, vec![q_pos])
    }

    fn run_r2np(g: &mut OrthoGraph, q: VertexId, query: &[f32]) -> (u64, SearchScratch) {
        let mut scratch = SearchScratch::new();
        scratch.begin(g.id_bound(), 2);
        // q was compared to r during its climb and entered r's list.
        let d = Metric::L1.eval(query, g.vector(0));
        scratch.record(0, d);
        g.insert_edge(0, q, d).unwrap();
        let visits = r2np_propagate(g, q, query, &[0], None, None, &mut scratch).unwrap();
        (visits, scratch)
    }

    #[test]
    fn r2np_reaches_depth_two_when_restriction_holds() {
        // m(q, p1) = 0.8 is below p1's k-th distance 1.2.
        let (mut g, q, query) = chain(0.2);
        let (visits, scratch) = run_r2np(&mut g, q, &query);
        assert!(scratch.is_compared(1));
        assert!(scratch.is_compared(2));
        assert!(visits >= 2);
        assert!(g.neighbors(q).iter().any(|e| e.neighbor == 1));
        assert!(g.neighbors(1).iter().any(|e| e.neighbor == q));
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn r2np_restriction_blocks_recursion() {
        // m(q, p1) = 1.5 is not below p1's k-th distance 1.2.
        let (mut g, q, query) = chain(-0.5);
        let (visits, scratch) = run_r2np(&mut g, q, &query);
        assert!(scratch.is_compared(1));
        assert!(!scratch.is_compared(2));
        assert_eq!(visits, 1);
    }

    #[test]
    fn r2np_with_everything_visited_is_a_no_op() {
        let (mut g, q, query) = chain(0.2);
        let mut scratch = SearchScratch::new();
        scratch.begin(g.id_bound(), 2);
        for v in 0..5 {
            let d = Metric::L1.eval(&query, g.vector(v));
            scratch.record(v, d);
        }
        let before: Vec<_> = (0..6).map(|v| g.neighbors(v).to_vec()).collect();
        let visits = r2np_propagate(&mut g, q, &query, &[0, 1, 2], None, None, &mut scratch).unwrap();
        assert_eq!(visits, 0);
        let after: Vec<_> = (0..6).map(|v| g.neighbors(v).to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn r2np_depth_limit() {
        let (mut g, q, query) = chain(0.2);
        let mut scratch = SearchScratch::new();
        scratch.begin(g.id_bound(), 2);
        let d = Metric::L1.eval(&query, g.vector(0));
        scratch.record(0, d);
        g.insert_edge(0, q, d).unwrap();
        r2np_propagate(&mut g, q, &query, &[0], Some(1), None, &mut scratch).unwrap();
        assert!(scratch.is_compared(1));
        assert!(!scratch.is_compared(2));
    }

    #[test]
    fn intrinsic_dimension_tracks_data_dimension() {
        for d in [2usize, 6] {
            let data = gen_uniform(256, d, 5);
            let g = bootstrap(&data, Metric::L2, &BuildConfig::new(16)).unwrap();
            let est = estimate_intrinsic_dim(&g).unwrap();
            assert!(est > d as f64 * 0.5 && est < d as f64 * 1.6, "d={d} est={est}");
        }
    }
}
