//! Plain Dijkstra over a single cost feature.
//!
//! The heap orders by `(cost, vertex id)` and relaxation is strict, so the
//! settled order and the resulting parents are deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::netmodel::{CostKind, EdgeId, Path, RoadNetwork, VertexId};

#[derive(Copy, Clone, Debug)]
pub(crate) struct HeapEntry {
    pub cost: f64,
    pub vertex: VertexId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Direction a search follows edges in.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Result of a one-to-all search: distances and parent edges.
#[derive(Clone, Debug)]
pub struct SearchTree {
    origin: VertexId,
    direction: Direction,
    dist: Vec<f64>,
    parent: Vec<Option<EdgeId>>,
}

impl SearchTree {
    pub(crate) fn from_parts(
        origin: VertexId,
        direction: Direction,
        dist: Vec<f64>,
        parent: Vec<Option<EdgeId>>,
    ) -> Self {
        SearchTree {
            origin,
            direction,
            dist,
            parent,
        }
    }

    pub fn origin(&self) -> VertexId {
        self.origin
    }

    pub fn cost_to(&self, v: VertexId) -> f64 {
        self.dist[v.index()]
    }

    pub fn reached(&self, v: VertexId) -> bool {
        self.dist[v.index()].is_finite()
    }

    /// Path between the origin and `v`, oriented origin→v for forward trees
    /// and v→origin for backward trees.
    pub fn path_to(&self, net: &RoadNetwork, v: VertexId) -> Option<Path> {
        if !self.reached(v) {
            return None;
        }
        let mut edges = Vec::new();
        let mut cur = v;
        while let Some(e) = self.parent[cur.index()] {
            edges.push(e);
            let edge = net.edge(e);
            cur = match self.direction {
                Direction::Forward => edge.from,
                Direction::Backward => edge.to,
            };
        }
        match self.direction {
            Direction::Forward => {
                edges.reverse();
                Some(Path::from_edges(net, self.origin, edges))
            }
            Direction::Backward => Some(Path::from_edges(net, v, edges)),
        }
    }
}

struct Dijkstra<'a> {
    net: &'a RoadNetwork,
    kind: CostKind,
    direction: Direction,
    dist: Vec<f64>,
    parent: Vec<Option<EdgeId>>,
    settled: Vec<bool>,
    heap: BinaryHeap<HeapEntry>,
}

impl<'a> Dijkstra<'a> {
    fn new(net: &'a RoadNetwork, origin: VertexId, kind: CostKind, direction: Direction) -> Self {
        let n = net.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        dist[origin.index()] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            cost: 0.0,
            vertex: origin,
        });
        Dijkstra {
            net,
            kind,
            direction,
            dist,
            parent: vec![None; n],
            settled: vec![false; n],
            heap,
        }
    }

    /// Settles and returns the next vertex, relaxing its edges.
    fn settle_next(&mut self) -> Option<VertexId> {
        while let Some(HeapEntry { cost, vertex: u }) = self.heap.pop() {
            if self.settled[u.index()] || cost > self.dist[u.index()] {
                continue;
            }
            self.settled[u.index()] = true;
            let edges = match self.direction {
                Direction::Forward => self.net.out_edges(u),
                Direction::Backward => self.net.in_edges(u),
            };
            for &e in edges {
                let edge = self.net.edge(e);
                let x = match self.direction {
                    Direction::Forward => edge.to,
                    Direction::Backward => edge.from,
                };
                let next = cost + self.net.weight(e, self.kind);
                if next < self.dist[x.index()] {
                    self.dist[x.index()] = next;
                    self.parent[x.index()] = Some(e);
                    self.heap.push(HeapEntry {
                        cost: next,
                        vertex: x,
                    });
                }
            }
            return Some(u);
        }
        None
    }

    fn into_tree(self, origin: VertexId) -> SearchTree {
        SearchTree::from_parts(origin, self.direction, self.dist, self.parent)
    }
}

/// Cost-minimal path from `s` to `d` under one cost feature.
pub fn shortest_path(net: &RoadNetwork, s: VertexId, d: VertexId, kind: CostKind) -> Result<Path> {
    for v in [s, d] {
        if !net.contains(v) {
            return Err(Error::UnknownVertex(v.0 as i64));
        }
    }
    let mut search = Dijkstra::new(net, s, kind, Direction::Forward);
    while let Some(u) = search.settle_next() {
        if u == d {
            return Ok(search
                .into_tree(s)
                .path_to(net, d)
                .expect("settled vertex is reachable"));
        }
    }
    Err(Error::NoPath {
        from: net.original_id(s),
        to: net.original_id(d),
    })
}

/// One-to-all search from `origin`.
pub fn shortest_path_tree(
    net: &RoadNetwork,
    origin: VertexId,
    kind: CostKind,
    direction: Direction,
) -> SearchTree {
    let mut search = Dijkstra::new(net, origin, kind, direction);
    while search.settle_next().is_some() {}
    search.into_tree(origin)
}

/// Runs a search from `origin` and stops at the first settled vertex for which
/// `hit` holds, returning the path to it. Returns `None` if `stop_at` or the
/// whole reachable set is settled first.
///
/// Backward probes return the path oriented from the hit vertex to `origin`.
pub fn probe(
    net: &RoadNetwork,
    origin: VertexId,
    kind: CostKind,
    direction: Direction,
    stop_at: VertexId,
    mut hit: impl FnMut(VertexId) -> bool,
) -> Option<Path> {
    let mut search = Dijkstra::new(net, origin, kind, direction);
    while let Some(u) = search.settle_next() {
        if hit(u) {
            return search.into_tree(origin).path_to(net, u);
        }
        if u == stop_at {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testnet::{build, vids};
    use crate::netmodel::RoadType;

    const R: RoadType = RoadType::Residential;

    #[test]
    fn source_equals_destination() {
        let net = build(2, &[(0, 1, 100.0, 36.0, R)]);
        let p = shortest_path(&net, VertexId(1), VertexId(1), CostKind::Distance).unwrap();
        assert_eq!(p.vertices(), vids(&[1]).as_slice());
        assert_eq!(p.cost(&net, CostKind::Distance), 0.0);
    }

    #[test]
    fn picks_the_shorter_of_two_routes() {
        // 0 -> 1 -> 3 is 500 m, 0 -> 2 -> 3 is 700 m
        let net = build(
            4,
            &[
                (0, 1, 250.0, 50.0, R),
                (1, 3, 250.0, 50.0, R),
                (0, 2, 350.0, 50.0, R),
                (2, 3, 350.0, 50.0, R),
            ],
        );
        let p = shortest_path(&net, VertexId(0), VertexId(3), CostKind::Distance).unwrap();
        assert_eq!(p.vertices(), vids(&[0, 1, 3]).as_slice());
        assert_eq!(p.cost(&net, CostKind::Distance), 500.0);
    }

    #[test]
    fn unreachable_is_no_path() {
        let net = build(3, &[(0, 1, 100.0, 36.0, R)]);
        assert!(matches!(
            shortest_path(&net, VertexId(0), VertexId(2), CostKind::TravelTime),
            Err(Error::NoPath { from: 0, to: 2 })
        ));
    }

    #[test]
    fn backward_tree_orients_paths_toward_origin() {
        let net = build(3, &[(0, 1, 100.0, 36.0, R), (1, 2, 100.0, 36.0, R)]);
        let tree = shortest_path_tree(&net, VertexId(2), CostKind::Distance, Direction::Backward);
        let p = tree.path_to(&net, VertexId(0)).unwrap();
        assert_eq!(p.vertices(), vids(&[0, 1, 2]).as_slice());
        assert_eq!(tree.cost_to(VertexId(0)), 200.0);
    }

    #[test]
    fn probe_stops_at_first_hit() {
        let net = build(4, &[(0, 1, 1.0, 36.0, R), (1, 2, 1.0, 36.0, R), (2, 3, 1.0, 36.0, R)]);
        let p = probe(&net, VertexId(0), CostKind::TravelTime, Direction::Forward, VertexId(3), |v| {
            v.0 >= 2
        })
        .unwrap();
        assert_eq!(p.vertices(), vids(&[0, 1, 2]).as_slice());
        let none = probe(&net, VertexId(0), CostKind::TravelTime, Direction::Forward, VertexId(1), |v| {
            v.0 >= 2
        });
        assert!(none.is_none());
    }
}
