//! Preference-constrained routing and B-edge path population.
//!
//! At a vertex with at least one outgoing edge that satisfies the slave
//! road condition, only such edges are relaxed. Elsewhere every edge is. The
//! rule depends on the vertex alone, so the search is Dijkstra on a pruned
//! graph and keeps its optimality on that graph.

use std::collections::BinaryHeap;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::RegionId;
use crate::error::{Error, Result};
use crate::netmodel::{planar_distance_m, EdgeId, Path, RoadNetwork, VertexId};
use crate::preference::{PreferenceVector, RoadCondition};
use crate::region_graph::{EdgeKind, PathRecord, RegionGraphModel};
use crate::search::{Direction, HeapEntry, SearchTree};

/// Default cap on transfer-center pairs examined per B-edge.
pub const DEFAULT_PAIR_CAP: usize = 64;

fn admitted_edges<'a>(
    net: &'a RoadNetwork,
    slave: Option<RoadCondition>,
    u: VertexId,
) -> impl Iterator<Item = EdgeId> + 'a {
    let out = net.out_edges(u);
    let restrict = slave.filter(|c| out.iter().any(|&e| c.admits(net.edge(e).road_type)));
    out.iter()
        .copied()
        .filter(move |&e| restrict.is_none_or(|c| c.admits(net.edge(e).road_type)))
}

struct Search<'a> {
    net: &'a RoadNetwork,
    pref: PreferenceVector,
    dist: Vec<f64>,
    parent: Vec<Option<EdgeId>>,
    settled: Vec<bool>,
    heap: BinaryHeap<HeapEntry>,
}

impl<'a> Search<'a> {
    fn new(net: &'a RoadNetwork, pref: PreferenceVector, s: VertexId) -> Self {
        let n = net.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        dist[s.index()] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { cost: 0.0, vertex: s });
        Search {
            net,
            pref,
            dist,
            parent: vec![None; n],
            settled: vec![false; n],
            heap,
        }
    }

    fn settle_next(&mut self) -> Option<VertexId> {
        while let Some(HeapEntry { cost, vertex: u }) = self.heap.pop() {
            if self.settled[u.index()] || cost > self.dist[u.index()] {
                continue;
            }
            self.settled[u.index()] = true;
            for e in admitted_edges(self.net, self.pref.slave, u) {
                let x = self.net.edge(e).to;
                let next = cost + self.net.weight(e, self.pref.master);
                if next < self.dist[x.index()] {
                    self.dist[x.index()] = next;
                    self.parent[x.index()] = Some(e);
                    self.heap.push(HeapEntry { cost: next, vertex: x });
                }
            }
            return Some(u);
        }
        None
    }

    fn into_tree(self, s: VertexId) -> SearchTree {
        SearchTree::from_parts(s, Direction::Forward, self.dist, self.parent)
    }
}

/// Least-master-cost path from `s` to `d` under the road-condition pruning.
pub fn preference_dijkstra(
    net: &RoadNetwork,
    pref: PreferenceVector,
    s: VertexId,
    d: VertexId,
) -> Result<Path> {
    for v in [s, d] {
        if !net.contains(v) {
            return Err(Error::UnknownVertex(v.0 as i64));
        }
    }
    let mut search = Search::new(net, pref, s);
    while let Some(u) = search.settle_next() {
        if u == d {
            return Ok(search.into_tree(s).path_to(net, d).expect("settled"));
        }
    }
    Err(Error::NoPath {
        from: net.original_id(s),
        to: net.original_id(d),
    })
}

/// One-to-all variant of [`preference_dijkstra`].
pub fn preference_tree(net: &RoadNetwork, pref: PreferenceVector, s: VertexId) -> SearchTree {
    let mut search = Search::new(net, pref, s);
    while search.settle_next().is_some() {}
    search.into_tree(s)
}

/// Member closest to the region centroid; stands in for a region without
/// observed transfer centers.
pub fn surrogate_center(net: &RoadNetwork, model: &RegionGraphModel, r: RegionId) -> VertexId {
    let region = model.region(r);
    let (clon, clat) = region.centroid;
    *region
        .members
        .iter()
        .min_by(|&&a, &&b| {
            let da = net.vertex(a);
            let db = net.vertex(b);
            planar_distance_m(da.lon, da.lat, clon, clat)
                .total_cmp(&planar_distance_m(db.lon, db.lat, clon, clat))
                .then(a.cmp(&b))
        })
        .expect("regions are non-empty")
}

/// Transfer centers of `r`, most used first, or the surrogate center.
fn centers(net: &RoadNetwork, model: &RegionGraphModel, r: RegionId) -> Vec<VertexId> {
    let mut cs: Vec<_> = model.transfer_centers(r).to_vec();
    if cs.is_empty() {
        return vec![surrogate_center(net, model, r)];
    }
    cs.sort_by(|a, b| b.count.cmp(&a.count).then(a.vertex.cmp(&b.vertex)));
    cs.into_iter().map(|c| c.vertex).collect()
}

/// Drops the least used center from the larger side (the source side on a
/// tie) until at most `cap` pairs remain.
pub fn cap_pairs(mut from: Vec<VertexId>, mut to: Vec<VertexId>, cap: usize) -> (Vec<VertexId>, Vec<VertexId>) {
    let cap = cap.max(1);
    while from.len() * to.len() > cap {
        if from.len() >= to.len() {
            from.pop();
        } else {
            to.pop();
        }
    }
    (from, to)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulateReport {
    pub populated: usize,
    pub dead: usize,
    pub paths: usize,
}

/// Attaches preference-constrained paths between transfer-center pairs to
/// every B-edge. A B-edge without a preference is routed as fastest.
pub fn populate_b_edge_paths(
    net: &RoadNetwork,
    model: &mut RegionGraphModel,
    pair_cap: usize,
) -> PopulateReport {
    let jobs: Vec<(usize, PreferenceVector, Vec<VertexId>, Vec<VertexId>)> = model
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EdgeKind::B)
        .map(|(id, e)| {
            let pref = e.preference.unwrap_or_else(PreferenceVector::fastest);
            let (a, b) = cap_pairs(centers(net, model, e.from), centers(net, model, e.to), pair_cap);
            (id, pref, a, b)
        })
        .collect();

    let results: Vec<(usize, Vec<PathRecord>)> = jobs
        .into_par_iter()
        .map(|(id, pref, from, to)| {
            let mut paths = Vec::new();
            for &a in &from {
                let tree = preference_tree(net, pref, a);
                for &b in &to {
                    if let Some(p) = tree.path_to(net, b) {
                        paths.push(PathRecord::computed(p));
                    }
                }
            }
            (id, paths)
        })
        .collect();

    let mut report = PopulateReport::default();
    let edges = model.edges_mut();
    for (id, paths) in results {
        let e = &mut edges[id];
        e.dead = paths.is_empty();
        if e.dead {
            report.dead += 1;
        } else {
            report.populated += 1;
            report.paths += paths.len();
        }
        e.paths = paths;
    }
    debug!(
        "populated {} B-edges with {} paths, {} dead",
        report.populated, report.paths, report.dead
    );
    report
}
