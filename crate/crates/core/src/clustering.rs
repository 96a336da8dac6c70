//! Popularity-driven agglomerative clustering of the trajectory graph.
//!
//! The trajectory graph keeps only road segments some trajectory traversed,
//! direction-collapsed, weighted by traversal counts. Clusters grow from the
//! most popular vertex outward while the modularity gain stays positive and
//! the road type of the merge stays consistent.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{EdgeId, RoadNetwork, RoadType, Trajectory, VertexId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryGraphEdge {
    pub a: VertexId,
    pub b: VertexId,
    pub popularity: u64,
    pub road_type: RoadType,
}

/// Undirected graph of the traversed part of the road network.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryGraph {
    vertices: Vec<VertexId>,
    popularity: BTreeMap<VertexId, u64>,
    edges: Vec<TrajectoryGraphEdge>,
    index: BTreeMap<(VertexId, VertexId), usize>,
    total: u64,
}

fn undirected(a: VertexId, b: VertexId) -> (VertexId, VertexId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TrajectoryGraph {
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[TrajectoryGraphEdge] {
        &self.edges
    }

    /// `S_i`: summed popularity of the edges incident to `v`.
    pub fn vertex_popularity(&self, v: VertexId) -> u64 {
        self.popularity.get(&v).copied().unwrap_or(0)
    }

    /// `S`: summed popularity of all edges.
    pub fn total_popularity(&self) -> u64 {
        self.total
    }

    pub fn edge(&self, a: VertexId, b: VertexId) -> Option<&TrajectoryGraphEdge> {
        self.index.get(&undirected(a, b)).map(|&i| &self.edges[i])
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.popularity.contains_key(&v)
    }
}

/// Counts traversals per undirected segment. Self-loops are ignored.
pub fn build_trajectory_graph(net: &RoadNetwork, trajectories: &[Trajectory]) -> TrajectoryGraph {
    // key -> (popularity, lowest directed edge id seen)
    let mut counts: BTreeMap<(VertexId, VertexId), (u64, EdgeId)> = BTreeMap::new();
    for t in trajectories {
        for &e in t.path.edges() {
            let edge = net.edge(e);
            if edge.from == edge.to {
                continue;
            }
            let entry = counts.entry(undirected(edge.from, edge.to)).or_insert((0, e));
            entry.0 += 1;
            entry.1 = entry.1.min(e);
        }
    }
    let mut g = TrajectoryGraph::default();
    for (&(a, b), &(pop, e)) in &counts {
        g.index.insert((a, b), g.edges.len());
        g.edges.push(TrajectoryGraphEdge {
            a,
            b,
            popularity: pop,
            road_type: net.edge(e).road_type,
        });
        *g.popularity.entry(a).or_default() += pop;
        *g.popularity.entry(b).or_default() += pop;
        g.total += pop;
    }
    g.vertices = g.popularity.keys().copied().collect();
    g
}

/// Road type of the (possibly merged) link between two clusters.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LinkType {
    Uniform(RoadType),
    /// Parallel links of different road types were folded together.
    Mixed,
}

impl LinkType {
    fn combine(self, other: LinkType) -> LinkType {
        match (self, other) {
            (LinkType::Uniform(a), LinkType::Uniform(b)) if a == b => self,
            _ => LinkType::Mixed,
        }
    }

    fn is(self, t: RoadType) -> bool {
        self == LinkType::Uniform(t)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
struct Link {
    popularity: u64,
    kind: LinkType,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterKind {
    Simple,
    Aggregate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterVertex {
    pub members: Vec<VertexId>,
    pub popularity: u64,
    /// Present exactly for aggregate vertices.
    pub road_type: Option<RoadType>,
}

impl ClusterVertex {
    pub fn kind(&self) -> ClusterKind {
        if self.road_type.is_some() {
            ClusterKind::Aggregate
        } else {
            ClusterKind::Simple
        }
    }

    fn min_member(&self) -> VertexId {
        self.members[0]
    }
}

/// Which merge procedure joined two clusters, named after
/// `(v_k kind, v_j kind)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeCase {
    SimpleSimple,
    SimpleAggregate,
    AggregateSimple,
    AggregateAggregate,
}

/// One executed merge, recorded for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeRecord {
    pub case: MergeCase,
    /// Smallest member of `v_k` and `v_j` at qualification time.
    pub into: VertexId,
    pub absorbed: VertexId,
    /// Modularity gain evaluated when the pair qualified.
    pub gain: f64,
    pub link: LinkType,
    pub k_road_type: Option<RoadType>,
    pub j_road_type: Option<RoadType>,
}

impl MergeRecord {
    /// Whether the record satisfies positive gain and the road-type rule.
    pub fn is_admissible(&self) -> bool {
        self.gain > 0.0
            && match self.case {
                MergeCase::SimpleSimple => true,
                MergeCase::SimpleAggregate => self.j_road_type.is_some_and(|t| self.link.is(t)),
                MergeCase::AggregateSimple => self.k_road_type.is_some_and(|t| self.link.is(t)),
                MergeCase::AggregateAggregate => {
                    self.k_road_type.is_some() && self.k_road_type == self.j_road_type
                }
            }
    }
}

/// Mutable clustering state: cluster vertices and the links between them.
#[derive(Clone, Debug)]
pub struct ClusterState {
    total: f64,
    clusters: Vec<ClusterVertex>,
    alive: Vec<bool>,
    links: Vec<BTreeMap<usize, Link>>,
}

impl ClusterState {
    /// One simple cluster per trajectory-graph vertex, indexed in vertex order.
    pub fn new(tg: &TrajectoryGraph) -> Self {
        let pos: BTreeMap<VertexId, usize> =
            tg.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let clusters = tg
            .vertices
            .iter()
            .map(|&v| ClusterVertex {
                members: vec![v],
                popularity: tg.vertex_popularity(v),
                road_type: None,
            })
            .collect();
        let mut links = vec![BTreeMap::new(); tg.vertices.len()];
        for e in &tg.edges {
            let (i, j) = (pos[&e.a], pos[&e.b]);
            let link = Link {
                popularity: e.popularity,
                kind: LinkType::Uniform(e.road_type),
            };
            links[i].insert(j, link);
            links[j].insert(i, link);
        }
        ClusterState {
            total: tg.total as f64,
            clusters,
            alive: vec![true; tg.vertices.len()],
            links,
        }
    }

    pub fn cluster(&self, c: usize) -> &ClusterVertex {
        &self.clusters[c]
    }

    pub fn neighbors(&self, c: usize) -> Vec<usize> {
        self.links[c].keys().copied().collect()
    }

    pub fn link_type(&self, a: usize, b: usize) -> Option<LinkType> {
        self.links[a].get(&b).map(|l| l.kind)
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        if u == v {
            return Err(Error::InvalidArgument(
                "modularity gain needs two distinct clusters".into(),
            ));
        }
        for c in [u, v] {
            if c >= self.clusters.len() || !self.alive[c] {
                return Err(Error::InvalidArgument(format!("no live cluster {c}")));
            }
        }
        Ok(())
    }

    /// `s_uv / S - S_u * S_v / S^2` for adjacent clusters, 0 otherwise.
    pub fn modularity_gain(&self, u: usize, v: usize) -> Result<f64> {
        self.check_pair(u, v)?;
        Ok(self.gain(u, v))
    }

    fn gain(&self, u: usize, v: usize) -> f64 {
        match self.links[u].get(&v) {
            Some(link) => {
                let s = self.total;
                let su = self.clusters[u].popularity as f64;
                let sv = self.clusters[v].popularity as f64;
                link.popularity as f64 / s - su * sv / (s * s)
            }
            None => 0.0,
        }
    }

    /// Positive gain plus the road-type condition for the kinds of `k` and `j`.
    pub fn check_qualification(&self, k: usize, j: usize) -> bool {
        let Some(link) = self.links[k].get(&j) else {
            return false;
        };
        if self.gain(k, j) <= 0.0 {
            return false;
        }
        let (ck, cj) = (&self.clusters[k], &self.clusters[j]);
        match (ck.road_type, cj.road_type) {
            (None, None) => true,
            (None, Some(jt)) => link.kind.is(jt),
            (Some(kt), None) => link.kind.is(kt),
            (Some(kt), Some(jt)) => kt == jt,
        }
    }

    /// Subset of the qualified neighbours `vb` that actually merge with `k`.
    ///
    /// An aggregate takes all of them. A simple vertex takes the largest group
    /// sharing one link road type; ties go to the lower road-type code.
    pub fn select_merge(&self, k: usize, vb: &[usize]) -> Vec<usize> {
        if self.clusters[k].kind() == ClusterKind::Aggregate {
            let mut all = vb.to_vec();
            all.sort_unstable();
            return all;
        }
        let mut groups: BTreeMap<RoadType, Vec<usize>> = BTreeMap::new();
        for &j in vb {
            if let Some(Link {
                kind: LinkType::Uniform(t),
                ..
            }) = self.links[k].get(&j)
            {
                groups.entry(*t).or_default().push(j);
            }
        }
        let mut best: Option<Vec<usize>> = None;
        // BTreeMap iterates in ascending road-type order, so strict `>` keeps
        // the lowest code on ties.
        for (_, mut group) in groups {
            if best.as_ref().is_none_or(|b| group.len() > b.len()) {
                group.sort_unstable();
                best = Some(group);
            }
        }
        best.unwrap_or_default()
    }

    fn cut(&mut self, a: usize, b: usize) {
        self.links[a].remove(&b);
        self.links[b].remove(&a);
    }

    /// Folds cluster `j` into `k`.
    fn merge(&mut self, k: usize, j: usize) {
        let link = self.links[k].remove(&j).expect("merging non-adjacent clusters");
        self.links[j].remove(&k);

        let absorbed = std::mem::take(&mut self.clusters[j].members);
        let jt = self.clusters[j].road_type;
        let jp = self.clusters[j].popularity;
        let ck = &mut self.clusters[k];
        ck.members.extend(absorbed);
        ck.members.sort_unstable();
        ck.popularity += jp;
        if ck.road_type.is_none() {
            ck.road_type = match (jt, link.kind) {
                (Some(t), _) => Some(t),
                (None, LinkType::Uniform(t)) => Some(t),
                (None, LinkType::Mixed) => unreachable!("simple clusters never share mixed links"),
            };
        }
        self.alive[j] = false;

        let moved = std::mem::take(&mut self.links[j]);
        for (x, l) in moved {
            self.links[x].remove(&j);
            let merged = match self.links[k].get(&x) {
                Some(existing) => Link {
                    popularity: existing.popularity + l.popularity,
                    kind: existing.kind.combine(l.kind),
                },
                None => l,
            };
            self.links[k].insert(x, merged);
            self.links[x].insert(k, merged);
        }
    }
}

pub fn modularity_gain(state: &ClusterState, u: usize, v: usize) -> Result<f64> {
    state.modularity_gain(u, v)
}

pub fn check_qualification(state: &ClusterState, k: usize, j: usize) -> bool {
    state.check_qualification(k, j)
}

pub fn select_merge(state: &ClusterState, k: usize, vb: &[usize]) -> Vec<usize> {
    state.select_merge(k, vb)
}

/// Final clusters plus an audit trail of the run.
#[derive(Clone, Debug, Default)]
pub struct Clustering {
    pub clusters: Vec<ClusterVertex>,
    pub merges: Vec<MergeRecord>,
    pub cuts: usize,
    pub extractions: usize,
}

/// Runs the agglomerative clustering to completion.
///
/// The queue pops the most popular cluster first, then the one with the
/// smallest member vertex id.
pub fn bottom_up_clustering(tg: &TrajectoryGraph) -> Clustering {
    let mut state = ClusterState::new(tg);
    let key = |s: &ClusterState, c: usize| {
        (
            Reverse(s.clusters[c].popularity),
            s.clusters[c].min_member(),
            c,
        )
    };
    let mut queue: BTreeSet<(Reverse<u64>, VertexId, usize)> =
        (0..state.clusters.len()).map(|c| key(&state, c)).collect();
    let mut out = Clustering::default();
    let mut finished = Vec::new();

    while let Some(entry) = queue.pop_first() {
        out.extractions += 1;
        let k = entry.2;
        let adjacent = state.neighbors(k);
        if adjacent.is_empty() {
            finished.push(k);
            continue;
        }
        let qualified: Vec<usize> = adjacent
            .iter()
            .copied()
            .filter(|&j| state.check_qualification(k, j))
            .collect();
        let selected = state.select_merge(k, &qualified);
        for &j in &adjacent {
            if selected.binary_search(&j).is_err() {
                state.cut(k, j);
                out.cuts += 1;
            }
        }
        let k_kind = state.clusters[k].kind();
        let k_rt = state.clusters[k].road_type;
        let records: Vec<MergeRecord> = selected
            .iter()
            .map(|&j| {
                let cj = &state.clusters[j];
                MergeRecord {
                    case: match (k_kind, cj.kind()) {
                        (ClusterKind::Simple, ClusterKind::Simple) => MergeCase::SimpleSimple,
                        (ClusterKind::Simple, ClusterKind::Aggregate) => MergeCase::SimpleAggregate,
                        (ClusterKind::Aggregate, ClusterKind::Simple) => MergeCase::AggregateSimple,
                        (ClusterKind::Aggregate, ClusterKind::Aggregate) => {
                            MergeCase::AggregateAggregate
                        }
                    },
                    into: state.clusters[k].min_member(),
                    absorbed: cj.min_member(),
                    gain: state.gain(k, j),
                    link: state.links[k][&j].kind,
                    k_road_type: k_rt,
                    j_road_type: cj.road_type,
                }
            })
            .collect();
        for (&j, rec) in selected.iter().zip(records) {
            debug_assert!(rec.is_admissible(), "inadmissible merge {rec:?}");
            queue.remove(&key(&state, j));
            state.merge(k, j);
            out.merges.push(rec);
        }
        queue.insert(key(&state, k));
    }

    debug!(
        "clustering: {} clusters, {} merges, {} cuts, {} extractions",
        finished.len(),
        out.merges.len(),
        out.cuts,
        out.extractions
    );
    finished.sort_by_key(|&c| state.clusters[c].min_member());
    out.clusters = finished
        .into_iter()
        .map(|c| state.clusters[c].clone())
        .collect();
    out
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(pub u32);

impl RegionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A set of homogeneous vertices produced by clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub members: Vec<VertexId>,
    /// Absent for singleton regions.
    pub road_type: Option<RoadType>,
    pub popularity: u64,
    /// Mean member coordinate as `(lon, lat)`.
    pub centroid: (f64, f64),
}

impl Clustering {
    /// Regions ordered by smallest member vertex id.
    pub fn regions(&self, net: &RoadNetwork) -> Vec<Region> {
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let n = c.members.len() as f64;
                let (lon, lat) = c.members.iter().fold((0.0, 0.0), |acc, &v| {
                    let x = net.vertex(v);
                    (acc.0 + x.lon, acc.1 + x.lat)
                });
                Region {
                    id: RegionId(i as u32),
                    members: c.members.clone(),
                    road_type: c.road_type,
                    popularity: c.popularity,
                    centroid: (lon / n, lat / n),
                }
            })
            .collect()
    }
}

/// Serializable region summary for the optional regions dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionDump {
    pub region_id: u32,
    pub road_type: Option<RoadType>,
    pub member_ids: Vec<i64>,
    pub centroid: (f64, f64),
}

pub fn regions_dump(net: &RoadNetwork, regions: &[Region]) -> Vec<RegionDump> {
    regions
        .iter()
        .map(|r| RegionDump {
            region_id: r.id.0,
            road_type: r.road_type,
            member_ids: r.members.iter().map(|&v| net.original_id(v)).collect(),
            centroid: r.centroid,
        })
        .collect()
}
