//! Orthogonal list: every vertex owns a sorted k-NN list and an unbounded
//! reverse list naming the vertices whose k-NN lists contain it.
//!
//! Each forward edge carries its cached distance and an occlusion factor
//! `lambda`, the number of list-mates ranked ahead of it that were found to
//! be closer to it than the owner is. Lambda is maintained lazily from
//! distances that the caller already has at hand (see
//! [`OrthoGraph::update_with_lgd`]); evicting an occluder does not
//! decrement the survivors, only an explicit removal does.

use std::fmt;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{DistanceCounter, Metric};

pub type VertexId = u32;

const NOT_IN_POOL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub neighbor: VertexId,
    pub dist: f32,
    pub lambda: u32,
}

impl Edge {
    #[inline]
    fn precedes(&self, dist: f32, id: VertexId) -> bool {
        self.dist < dist || (self.dist == dist && self.neighbor < id)
    }
}

#[derive(Debug, Clone)]
pub struct OrthoGraph {
    k: usize,
    metric: Metric,
    data: Dataset,
    lists: Vec<Vec<Edge>>,
    reverses: Vec<Vec<VertexId>>,
    alive: Vec<bool>,
    // Seed pool: live vertices that have been fully integrated.
    pool: Vec<VertexId>,
    pool_pos: Vec<u32>,
    reverse_cap: Option<usize>,
    frozen: bool,
}

impl OrthoGraph {
    pub fn new(dim: usize, k: usize, metric: Metric) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self {
            k,
            metric,
            data: Dataset::new(dim),
            lists: Vec::new(),
            reverses: Vec::new(),
            alive: Vec::new(),
            pool: Vec::new(),
            pool_pos: Vec::new(),
            reverse_cap: None,
            frozen: false,
        })
    }

    pub fn reserve(&mut self, additional: usize) {
        self.data.reserve(additional);
        self.lists.reserve(additional);
        self.reverses.reserve(additional);
        self.alive.reserve(additional);
        self.pool.reserve(additional);
        self.pool_pos.reserve(additional);
    }

    /// Rebuilds a graph from its forward lists; reverse lists are derived.
    ///
    /// `data` must hold a row for every id below `alive.len()`; rows of dead
    /// ids are never read.
    pub fn from_parts(
        k: usize,
        metric: Metric,
        data: Dataset,
        alive: Vec<bool>,
        lists: Vec<Vec<Edge>>,
    ) -> Result<Self> {
        let n = alive.len();
        if data.len() != n || lists.len() != n {
            return Err(Error::Malformed(format!(
                "{} rows and {} lists for {} ids",
                data.len(),
                lists.len(),
                n
            )));
        }
        let mut g = OrthoGraph::new(data.dim(), k, metric)?;
        let mut reverses = vec![Vec::new(); n];
        for (owner, list) in lists.iter().enumerate() {
            if list.len() > k {
                return Err(Error::Malformed(format!(
                    "vertex {owner} has {} neighbors, k = {k}",
                    list.len()
                )));
            }
            for e in list {
                if (e.neighbor as usize) >= n || !alive[e.neighbor as usize] || !alive[owner] {
                    return Err(Error::Malformed(format!(
                        "edge {owner} -> {} references a dead vertex",
                        e.neighbor
                    )));
                }
                reverses[e.neighbor as usize].push(owner as VertexId);
            }
        }
        g.data = data;
        g.lists = lists;
        g.reverses = reverses;
        g.pool_pos = vec![NOT_IN_POOL; n];
        for (v, &live) in alive.iter().enumerate() {
            if live {
                g.pool_pos[v] = g.pool.len() as u32;
                g.pool.push(v as VertexId);
            }
        }
        g.alive = alive;
        Ok(g)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// One past the largest id ever allocated, dead ids included.
    pub fn id_bound(&self) -> usize {
        self.alive.len()
    }

    pub fn live_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn is_live(&self, v: VertexId) -> bool {
        self.alive.get(v as usize).copied().unwrap_or(false)
    }

    pub fn live_ids(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(v, _)| v as VertexId)
    }

    /// Vertices eligible as random search seeds.
    pub fn seed_pool(&self) -> &[VertexId] {
        &self.pool
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    #[inline]
    pub fn vector(&self, v: VertexId) -> &[f32] {
        self.data.row(v as usize)
    }

    #[inline]
    pub fn neighbors(&self, v: VertexId) -> &[Edge] {
        &self.lists[v as usize]
    }

    #[inline]
    pub fn reverse(&self, v: VertexId) -> &[VertexId] {
        &self.reverses[v as usize]
    }

    /// Reverse list as seen by search, truncated to the soft cap if one is set.
    #[inline]
    pub fn reverse_for_search(&self, v: VertexId) -> &[VertexId] {
        let r = &self.reverses[v as usize];
        match self.reverse_cap {
            Some(cap) => &r[..r.len().min(cap)],
            None => r,
        }
    }

    /// Limits how many reverse neighbors search expands per vertex. The
    /// stored reverse lists stay complete.
    pub fn set_reverse_cap(&mut self, cap: Option<usize>) {
        self.reverse_cap = cap;
    }

    pub fn reverse_cap(&self) -> Option<usize> {
        self.reverse_cap
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn thaw(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn ensure_writable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(())
        }
    }

    fn ensure_live(&self, v: VertexId) -> Result<()> {
        match self.alive.get(v as usize) {
            Some(true) => Ok(()),
            Some(false) => Err(Error::AlreadyRemoved(v)),
            None => Err(Error::NotLive(v)),
        }
    }

    /// Appends a vertex with empty lists. It joins the seed pool only once
    /// [`OrthoGraph::publish`] is called.
    pub fn add_vertex(&mut self, v: &[f32]) -> Result<VertexId> {
        self.ensure_writable()?;
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        self.metric.validate(v)?;
        if self.alive.len() >= NOT_IN_POOL as usize {
            return Err(Error::InvalidParameter("vertex id space exhausted".into()));
        }
        let id = self.data.push(v)? as VertexId;
        self.lists.push(Vec::with_capacity(self.k));
        self.reverses.push(Vec::new());
        self.alive.push(true);
        self.pool_pos.push(NOT_IN_POOL);
        Ok(id)
    }

    pub fn publish(&mut self, v: VertexId) {
        if self.is_live(v) && self.pool_pos[v as usize] == NOT_IN_POOL {
            self.pool_pos[v as usize] = self.pool.len() as u32;
            self.pool.push(v);
        }
    }

    fn unpublish(&mut self, v: VertexId) {
        let pos = self.pool_pos[v as usize];
        if pos == NOT_IN_POOL {
            return;
        }
        self.pool.swap_remove(pos as usize);
        if let Some(&moved) = self.pool.get(pos as usize) {
            self.pool_pos[moved as usize] = pos;
        }
        self.pool_pos[v as usize] = NOT_IN_POOL;
    }

    fn check_edge(&self, owner: VertexId, cand: VertexId, dist: f32) -> Result<()> {
        self.ensure_writable()?;
        self.ensure_live(owner)?;
        self.ensure_live(cand)?;
        if owner == cand {
            return Err(Error::SelfLoop(owner));
        }
        if !dist.is_finite() || dist < 0.0 {
            return Err(Error::InvalidDistance(dist));
        }
        Ok(())
    }

    /// Sorted insert; returns the rank `cand` landed at.
    fn insert_ranked(&mut self, owner: VertexId, cand: VertexId, dist: f32) -> Option<usize> {
        let k = self.k;
        let list = &mut self.lists[owner as usize];
        if list.iter().any(|e| e.neighbor == cand) {
            return None;
        }
        let pos = list.partition_point(|e| e.precedes(dist, cand));
        if pos >= k {
            return None;
        }
        // Evict first so the list never exceeds its reserved capacity.
        let evicted = if list.len() == k { list.pop() } else { None };
        list.insert(
            pos,
            Edge {
                neighbor: cand,
                dist,
                lambda: 0,
            },
        );
        if let Some(e) = evicted {
            remove_first(&mut self.reverses[e.neighbor as usize], owner);
        }
        self.reverses[cand as usize].push(owner);
        Some(pos)
    }

    /// Inserts `cand` into the k-NN list of `owner` with `lambda = 0`.
    ///
    /// Returns `true` iff the list changed.
    pub fn insert_edge(&mut self, owner: VertexId, cand: VertexId, dist: f32) -> Result<bool> {
        self.check_edge(owner, cand, dist)?;
        Ok(self.insert_ranked(owner, cand, dist).is_some())
    }

    /// Inserts `q` into the list of `owner` and refreshes occlusion factors.
    ///
    /// `dcache(x)` yields the distance between `q` and `x` if it was computed
    /// during the current query, `f32::INFINITY` otherwise. Entries ranked
    /// before `q` keep their lambda, `q` gets one for each of them closer to
    /// `q` than `dist_q`, and every entry after `q` closer to `q` than
    /// `dist_q` gets one more.
    pub fn update_with_lgd<F>(
        &mut self,
        owner: VertexId,
        q: VertexId,
        dist_q: f32,
        dcache: F,
    ) -> Result<bool>
    where
        F: Fn(VertexId) -> f32,
    {
        self.check_edge(owner, q, dist_q)?;
        let Some(rank) = self.insert_ranked(owner, q, dist_q) else {
            return Ok(false);
        };
        let list = &mut self.lists[owner as usize];
        let occluders = list[..rank]
            .iter()
            .filter(|e| dcache(e.neighbor) < dist_q)
            .count();
        list[rank].lambda = occluders as u32;
        for e in &mut list[rank + 1..] {
            if dcache(e.neighbor) < dist_q {
                e.lambda += 1;
            }
        }
        Ok(true)
    }

    /// Mean lambda over the k-NN list of `owner`; zero for an empty list.
    pub fn avg_lambda(&self, owner: VertexId) -> Result<f64> {
        self.ensure_live(owner)?;
        Ok(self.mean_lambda(owner))
    }

    #[inline]
    pub(crate) fn mean_lambda(&self, owner: VertexId) -> f64 {
        let list = &self.lists[owner as usize];
        if list.is_empty() {
            0.0
        } else {
            list.iter().map(|e| e.lambda as f64).sum::<f64>() / list.len() as f64
        }
    }

    /// Lambda that `owner` carries inside the k-NN list of `other`, if any.
    #[inline]
    pub fn lambda_in(&self, other: VertexId, owner: VertexId) -> Option<u32> {
        self.lists[other as usize]
            .iter()
            .find(|e| e.neighbor == owner)
            .map(|e| e.lambda)
    }

    /// Deletes `s` from the graph and returns the number of edges dropped.
    ///
    /// Before `s` leaves a list, every entry ranked after it that `s` used to
    /// occlude has its lambda decremented; this costs one distance
    /// evaluation per such entry, charged to `counter`. Lists that lose `s`
    /// are not refilled.
    pub fn remove_sample(&mut self, s: VertexId, counter: &mut DistanceCounter) -> Result<usize> {
        self.ensure_writable()?;
        self.ensure_live(s)?;
        let mut dropped = 0;
        let owners = std::mem::take(&mut self.reverses[s as usize]);
        let metric = self.metric;
        for &r in &owners {
            let list = &mut self.lists[r as usize];
            let Some(j) = list.iter().position(|e| e.neighbor == s) else {
                continue;
            };
            let sv = self.data.row(s as usize);
            for e in &mut list[j + 1..] {
                let d = counter.eval(metric, sv, self.data.row(e.neighbor as usize));
                if d < e.dist {
                    e.lambda = e.lambda.saturating_sub(1);
                }
            }
            list.remove(j);
            dropped += 1;
        }
        for e in std::mem::take(&mut self.lists[s as usize]) {
            remove_first(&mut self.reverses[e.neighbor as usize], s);
            dropped += 1;
        }
        self.lists[s as usize] = Vec::new();
        self.reverses[s as usize] = Vec::new();
        self.unpublish(s);
        self.alive[s as usize] = false;
        Ok(dropped)
    }

    /// Owners whose lists contain `s`; the set [`OrthoGraph::remove_sample`]
    /// shrinks.
    pub fn owners_of(&self, s: VertexId) -> &[VertexId] {
        self.reverse(s)
    }

    /// Checks every structural invariant; an empty result means consistent.
    pub fn check_consistency(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.id_bound();
        let mut expected: Vec<Vec<VertexId>> = vec![Vec::new(); n];
        for owner in 0..n as VertexId {
            let list = &self.lists[owner as usize];
            if !self.alive[owner as usize] {
                if !list.is_empty() || !self.reverses[owner as usize].is_empty() {
                    out.push(Violation::DeadHasEdges { vertex: owner });
                }
                continue;
            }
            if list.len() > self.k {
                out.push(Violation::Overfull {
                    owner,
                    len: list.len(),
                });
            }
            for (rank, e) in list.iter().enumerate() {
                if e.neighbor == owner {
                    out.push(Violation::SelfLoop { owner });
                    continue;
                }
                if !self.is_live(e.neighbor) {
                    out.push(Violation::DeadReference {
                        owner,
                        neighbor: e.neighbor,
                    });
                    continue;
                }
                if rank > 0 && !list[rank - 1].precedes(e.dist, e.neighbor) {
                    out.push(Violation::Unsorted { owner, rank });
                }
                if list[..rank].iter().any(|o| o.neighbor == e.neighbor) {
                    out.push(Violation::Duplicate {
                        owner,
                        neighbor: e.neighbor,
                    });
                }
                let actual = self.metric.eval(self.vector(owner), self.vector(e.neighbor));
                let tol = 1e-5 * (actual.abs() as f64).max(1e-12);
                if !e.dist.is_finite()
                    || e.dist < 0.0
                    || ((e.dist - actual).abs() as f64) > tol
                {
                    out.push(Violation::DistanceMismatch {
                        owner,
                        neighbor: e.neighbor,
                        cached: e.dist,
                        actual,
                    });
                }
                expected[e.neighbor as usize].push(owner);
            }
        }
        for (v, want) in expected.iter_mut().enumerate() {
            if !self.alive[v] {
                continue;
            }
            let mut want = std::mem::take(want);
            let mut have = self.reverses[v].clone();
            want.sort_unstable();
            have.sort_unstable();
            let (mut i, mut j) = (0, 0);
            while i < want.len() || j < have.len() {
                match (want.get(i), have.get(j)) {
                    (Some(a), Some(b)) if a == b => {
                        i += 1;
                        j += 1;
                    }
                    (Some(&a), b) if b.is_none_or(|&b| a < b) => {
                        out.push(Violation::MissingReverse {
                            owner: a,
                            neighbor: v as VertexId,
                        });
                        i += 1;
                    }
                    (_, Some(&b)) => {
                        out.push(if self.is_live(b) {
                            Violation::StaleReverse {
                                vertex: v as VertexId,
                                member: b,
                            }
                        } else {
                            Violation::DeadReference {
                                owner: v as VertexId,
                                neighbor: b,
                            }
                        });
                        j += 1;
                    }
                    (Some(_), None) | (None, None) => unreachable!(),
                }
            }
        }
        out
    }

    /// Approximate heap footprint of the adjacency structure in bytes,
    /// excluding the vectors themselves.
    pub fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        let per_vertex_headers = 2 * size_of::<Vec<Edge>>() + size_of::<bool>() + size_of::<u32>();
        let lists: usize = self
            .lists
            .iter()
            .map(|l| l.capacity() * size_of::<Edge>())
            .sum();
        let reverses: usize = self
            .reverses
            .iter()
            .map(|r| r.capacity() * size_of::<VertexId>())
            .sum();
        per_vertex_headers * self.alive.len()
            + lists
            + reverses
            + self.pool.capacity() * size_of::<VertexId>()
    }
}

fn remove_first(v: &mut Vec<VertexId>, x: VertexId) {
    if let Some(i) = v.iter().position(|&y| y == x) {
        v.remove(i);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Unsorted { owner: VertexId, rank: usize },
    Duplicate { owner: VertexId, neighbor: VertexId },
    SelfLoop { owner: VertexId },
    Overfull { owner: VertexId, len: usize },
    DeadReference { owner: VertexId, neighbor: VertexId },
    DeadHasEdges { vertex: VertexId },
    /// `neighbor` is in the k-NN list of `owner`, but `owner` is missing
    /// from the reverse list of `neighbor`.
    MissingReverse { owner: VertexId, neighbor: VertexId },
    /// `member` is in the reverse list of `vertex` without a matching edge.
    StaleReverse { vertex: VertexId, member: VertexId },
    DistanceMismatch {
        owner: VertexId,
        neighbor: VertexId,
        cached: f32,
        actual: f32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unsorted { owner, rank } => {
                write!(f, "unsorted list of {owner} at rank {rank}")
            }
            Violation::Duplicate { owner, neighbor } => {
                write!(f, "duplicate neighbor {neighbor} in list of {owner}")
            }
            Violation::SelfLoop { owner } => write!(f, "self-loop on {owner}"),
            Violation::Overfull { owner, len } => {
                write!(f, "list of {owner} holds {len} entries")
            }
            Violation::DeadReference { owner, neighbor } => {
                write!(f, "{owner} references dead vertex {neighbor}")
            }
            Violation::DeadHasEdges { vertex } => {
                write!(f, "dead vertex {vertex} still owns edges")
            }
            Violation::MissingReverse { owner, neighbor } => {
                write!(f, "edge {owner} -> {neighbor} missing from reverse list of {neighbor}")
            }
            Violation::StaleReverse { vertex, member } => {
                write!(f, "reverse list of {vertex} names {member} without edge {member} -> {vertex}")
            }
            Violation::DistanceMismatch {
                owner,
                neighbor,
                cached,
                actual,
            } => write!(
                f,
                "edge {owner} -> {neighbor} caches {cached}, metric gives {actual}"
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f32], k: usize) -> OrthoGraph {
        let mut g = OrthoGraph::new(1, k, Metric::L1).unwrap();
        for &p in points {
            let v = g.add_vertex(&[p]).unwrap();
            g.publish(v);
        }
        g
    }

    fn ids(list: &[Edge]) -> Vec<(VertexId, f32)> {
        list.iter().map(|e| (e.neighbor, e.dist)).collect()
    }

    // r=0, a=1, b=2, c=3, d=4 placed so L1 distances to r are as listed.
    const R: VertexId = 0;
    const A: VertexId = 1;
    const B: VertexId = 2;
    const C: VertexId = 3;
    const D: VertexId = 4;

    #[test]
    fn insert_below_capacity() {
        let mut g = line(&[0.0, 1.0, 2.0, 1.5, 3.0], 2);
        assert!(g.insert_edge(R, A, 1.0).unwrap());
        assert!(g.insert_edge(R, B, 2.0).unwrap());
        assert_eq!(ids(g.neighbors(R)), vec![(A, 1.0), (B, 2.0)]);
        assert_eq!(g.reverse(B), &[R]);
    }

    #[test]
    fn insert_evicts_rear() {
        let mut g = line(&[0.0, 1.0, 2.0, 1.5, 3.0], 2);
        g.insert_edge(R, A, 1.0).unwrap();
        g.insert_edge(R, B, 2.0).unwrap();
        assert!(g.insert_edge(R, C, 1.5).unwrap());
        assert_eq!(ids(g.neighbors(R)), vec![(A, 1.0), (C, 1.5)]);
        assert!(g.reverse(B).is_empty());
        assert_eq!(g.reverse(C), &[R]);
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn insert_worse_than_rear_is_rejected() {
        let mut g = line(&[0.0, 1.0, 2.0, 1.5, 3.0], 2);
        g.insert_edge(R, A, 1.0).unwrap();
        g.insert_edge(R, B, 2.0).unwrap();
        assert!(!g.insert_edge(R, D, 3.0).unwrap());
        assert_eq!(ids(g.neighbors(R)), vec![(A, 1.0), (B, 2.0)]);
        assert!(g.reverse(D).is_empty());
    }

    #[test]
    fn insert_is_idempotent_and_ties_break_by_id() {
        let mut g = line(&[0.0, 1.0, -1.0], 2);
        assert!(g.insert_edge(0, 2, 1.0).unwrap());
        assert!(g.insert_edge(0, 1, 1.0).unwrap());
        assert!(!g.insert_edge(0, 1, 1.0).unwrap());
        assert_eq!(ids(g.neighbors(0)), vec![(1, 1.0), (2, 1.0)]);
        assert_eq!(g.reverse(1), &[0]);
    }

    #[test]
    fn insert_errors() {
        let mut g = line(&[0.0, 1.0], 1);
        assert!(matches!(g.insert_edge(0, 0, 0.0), Err(Error::SelfLoop(0))));
        assert!(matches!(g.insert_edge(0, 7, 1.0), Err(Error::NotLive(7))));
        assert!(matches!(
            g.insert_edge(0, 1, -1.0),
            Err(Error::InvalidDistance(_))
        ));
        assert!(matches!(
            g.insert_edge(0, 1, f32::NAN),
            Err(Error::InvalidDistance(_))
        ));
        g.freeze();
        assert!(matches!(g.insert_edge(0, 1, 1.0), Err(Error::Frozen)));
    }

    fn occlusion_scene(k: usize) -> OrthoGraph {
        // r, a and b from the occlusion illustration: b is occluded by a.
        let mut g = OrthoGraph::new(2, k, Metric::L2).unwrap();
        for p in [[0.0, 0.0], [1.0, 0.0], [1.2, 0.5]] {
            let v = g.add_vertex(&p).unwrap();
            g.publish(v);
        }
        g
    }

    #[test]
    fn lgd_rule_two_counts_occluders() {
        let mut g = occlusion_scene(3);
        let (r, a, b) = (0, 1, 2);
        g.insert_edge(r, a, 1.0).unwrap();
        let dist_q = Metric::L2.eval(g.vector(r), g.vector(b));
        assert!((dist_q - 1.3).abs() < 1e-6);
        let dab = Metric::L2.eval(g.vector(a), g.vector(b));
        assert!((dab - 0.5385165).abs() < 1e-6);
        let dcache = |x: VertexId| if x == a { dab } else { f32::INFINITY };
        assert!(g.update_with_lgd(r, b, dist_q, dcache).unwrap());
        let list = g.neighbors(r);
        assert_eq!(list[1].neighbor, b);
        assert_eq!(list[1].lambda, 1);
        assert_eq!(list[0].lambda, 0);
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn lgd_unvisited_neighbors_never_occlude() {
        let mut g = occlusion_scene(3);
        g.insert_edge(0, 1, 1.0).unwrap();
        let dist_q = Metric::L2.eval(g.vector(0), g.vector(2));
        g.update_with_lgd(0, 2, dist_q, |_| f32::INFINITY).unwrap();
        assert!(g.neighbors(0).iter().all(|e| e.lambda == 0));
    }

    #[test]
    fn lgd_rule_three_bumps_followers() {
        // Synthetic cache values; distances to r are exact on the line.
        let mut g = line(&[0.0, 1.0, 2.0, 1.5], 3);
        let (r, a, c, q) = (0, 1, 2, 3);
        g.insert_edge(r, a, 1.0).unwrap();
        g.insert_edge(r, c, 2.0).unwrap();
        let cache: HashMap<VertexId, f32> = [(c, 0.4)].into();
        let lookup = |x: VertexId| cache.get(&x).copied().unwrap_or(f32::INFINITY);
        assert!(g.update_with_lgd(r, q, 1.5, lookup).unwrap());
        let lambdas: Vec<_> = g.neighbors(r).iter().map(|e| (e.neighbor, e.lambda)).collect();
        assert_eq!(lambdas, vec![(a, 0), (q, 0), (c, 1)]);

        // With a cached below dist_q, q picks up one occluder as well.
        let mut g = line(&[0.0, 1.0, 2.0, 1.5], 3);
        g.insert_edge(r, a, 1.0).unwrap();
        g.insert_edge(r, c, 2.0).unwrap();
        let cache: HashMap<VertexId, f32> = [(a, 0.5), (c, 0.4)].into();
        let lookup = |x: VertexId| cache.get(&x).copied().unwrap_or(f32::INFINITY);
        g.update_with_lgd(r, q, 1.5, lookup).unwrap();
        let lambdas: Vec<_> = g.neighbors(r).iter().map(|e| e.lambda).collect();
        assert_eq!(lambdas, vec![0, 1, 1]);
    }

    #[test]
    fn avg_lambda_examples() {
        let mut g = line(&[0.0, 1.0, 2.0, 3.0], 3);
        assert_eq!(g.avg_lambda(0).unwrap(), 0.0);
        for v in 1..4 {
            g.insert_edge(0, v, v as f32).unwrap();
        }
        assert_eq!(g.avg_lambda(0).unwrap(), 0.0);
        for (i, e) in g.lists[0].iter_mut().enumerate() {
            e.lambda = i as u32;
        }
        assert_eq!(g.avg_lambda(0).unwrap(), 1.0);
        assert!(matches!(g.avg_lambda(9), Err(Error::NotLive(9))));
    }

    #[test]
    fn remove_pair_collapses() {
        let mut g = line(&[0.0, 1.0], 1);
        g.insert_edge(0, 1, 1.0).unwrap();
        g.insert_edge(1, 0, 1.0).unwrap();
        let mut c = DistanceCounter::new();
        assert_eq!(g.remove_sample(1, &mut c).unwrap(), 2);
        assert!(g.neighbors(0).is_empty());
        assert!(g.reverse(0).is_empty());
        assert!(!g.is_live(1));
        assert!(g.check_consistency().is_empty());
        assert!(matches!(
            g.remove_sample(1, &mut c),
            Err(Error::AlreadyRemoved(1))
        ));
    }

    #[test]
    fn remove_decrements_occluded_followers() {
        let mut g = occlusion_scene(3);
        let (r, a, b) = (0, 1, 2);
        g.insert_edge(r, a, 1.0).unwrap();
        let dist_q = Metric::L2.eval(g.vector(r), g.vector(b));
        let dab = Metric::L2.eval(g.vector(a), g.vector(b));
        g.update_with_lgd(r, b, dist_q, |x| if x == a { dab } else { f32::INFINITY })
            .unwrap();
        assert_eq!(g.neighbors(r)[1].lambda, 1);

        let mut c = DistanceCounter::new();
        assert_eq!(g.remove_sample(a, &mut c).unwrap(), 1);
        assert_eq!(c.count(), 1);
        let list = g.neighbors(r);
        assert_eq!(list.len(), 1);
        assert_eq!((list[0].neighbor, list[0].lambda), (b, 0));
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn remove_isolated_vertex() {
        let mut g = line(&[0.0, 1.0, 5.0], 1);
        g.insert_edge(2, 1, 4.0).unwrap();
        let mut c = DistanceCounter::new();
        assert_eq!(g.remove_sample(2, &mut c).unwrap(), 1);
        assert!(g.reverse(1).is_empty());
        assert_eq!(g.seed_pool().len(), 2);
        assert!(g.check_consistency().is_empty());
    }

    #[test]
    fn corrupted_reverse_list_is_reported_once() {
        let mut g = line(&[0.0, 1.0, 2.0], 2);
        g.insert_edge(0, 1, 1.0).unwrap();
        g.insert_edge(0, 2, 2.0).unwrap();
        g.reverses[2].clear();
        let report = g.check_consistency();
        assert_eq!(
            report,
            vec![Violation::MissingReverse {
                owner: 0,
                neighbor: 2
            }]
        );
        let text = report[0].to_string();
        assert!(text.contains('0') && text.contains('2'));

        let mut g = line(&[0.0, 1.0, 2.0], 2);
        g.insert_edge(0, 1, 1.0).unwrap();
        g.reverses[2].push(1);
        assert_eq!(
            g.check_consistency(),
            vec![Violation::StaleReverse {
                vertex: 2,
                member: 1
            }]
        );
    }

    #[test]
    fn distance_mismatch_is_reported() {
        let mut g = line(&[0.0, 1.0], 1);
        g.insert_edge(0, 1, 0.5).unwrap();
        assert!(matches!(
            g.check_consistency().as_slice(),
            [Violation::DistanceMismatch { .. }]
        ));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(usize, usize),
        Lgd(usize, usize, u8),
        Remove(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            4 => (0usize..24, 0usize..24).prop_map(|(a, b)| Op::Insert(a, b)),
            4 => (0usize..24, 0usize..24, any::<u8>()).prop_map(|(a, b, m)| Op::Lgd(a, b, m)),
            1 => (0usize..24).prop_map(Op::Remove),
        ]
    }

    proptest! {
        #[test]
        fn mutations_preserve_invariants(
            pts in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 3), 24),
            k in 1usize..6,
            ops in prop::collection::vec(op(), 1..200),
        ) {
            let mut g = OrthoGraph::new(3, k, Metric::L2).unwrap();
            for p in &pts {
                let v = g.add_vertex(p).unwrap();
                g.publish(v);
            }
            let mut c = DistanceCounter::new();
            for op in ops {
                match op {
                    Op::Insert(a, b) | Op::Lgd(a, b, _) if a == b => continue,
                    Op::Insert(a, b) => {
                        let (a, b) = (a as VertexId, b as VertexId);
                        if g.is_live(a) && g.is_live(b) {
                            let d = Metric::L2.eval(g.vector(a), g.vector(b));
                            g.insert_edge(a, b, d).unwrap();
                        }
                    }
                    Op::Lgd(a, b, mask) => {
                        let (a, b) = (a as VertexId, b as VertexId);
                        if g.is_live(a) && g.is_live(b) {
                            let d = Metric::L2.eval(g.vector(a), g.vector(b));
                            let before: Vec<Edge> = g.neighbors(a).to_vec();
                            let pts = &pts;
                            let cache = |x: VertexId| {
                                if (x as u8 ^ mask) & 1 == 0 {
                                    Metric::L2.eval(&pts[b as usize], &pts[x as usize])
                                } else {
                                    f32::INFINITY
                                }
                            };
                            let inserted = g.update_with_lgd(a, b, d, cache).unwrap();
                            if inserted {
                                let after = g.neighbors(a);
                                let rank = after.iter().position(|e| e.neighbor == b).unwrap();
                                // Entries ahead of q keep lambda; later ones move by at most one.
                                for e in &after[..rank] {
                                    let old = before.iter().find(|o| o.neighbor == e.neighbor).unwrap();
                                    prop_assert_eq!(old.lambda, e.lambda);
                                }
                                for e in &after[rank + 1..] {
                                    let old = before.iter().find(|o| o.neighbor == e.neighbor).unwrap();
                                    prop_assert!(e.lambda == old.lambda || e.lambda == old.lambda + 1);
                                }
                            }
                        }
                    }
                    Op::Remove(s) => {
                        let s = s as VertexId;
                        if g.is_live(s) && g.live_count() > 2 {
                            g.remove_sample(s, &mut c).unwrap();
                            for v in g.live_ids() {
                                prop_assert!(g.neighbors(v).iter().all(|e| e.neighbor != s));
                                prop_assert!(!g.reverse(v).contains(&s));
                            }
                        }
                    }
                }
                let report = g.check_consistency();
                prop_assert!(report.is_empty(), "{:?}", report);
            }
        }
    }
}
