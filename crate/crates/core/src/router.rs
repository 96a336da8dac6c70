//! Query answering over a populated region graph.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::clustering::RegionId;
use crate::error::{Error, Result};
use crate::netmodel::{planar_distance_m, CostKind, Path, RoadNetwork, VertexId};
use crate::region_graph::{PathRecord, RegionGraphModel};
use crate::search::{self, Direction};

/// How the query endpoints relate to the regions.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RouteTag {
    SameRegion,
    InRegion,
    InOutRegion,
    OutRegion,
}

impl RouteTag {
    pub fn name(self) -> &'static str {
        match self {
            RouteTag::SameRegion => "SameRegion",
            RouteTag::InRegion => "InRegion",
            RouteTag::InOutRegion => "InOutRegion",
            RouteTag::OutRegion => "OutRegion",
        }
    }

    /// Tag implied by the region membership of two endpoints.
    pub fn classify(rs: Option<RegionId>, rd: Option<RegionId>) -> RouteTag {
        match (rs, rd) {
            (Some(a), Some(b)) if a == b => RouteTag::SameRegion,
            (Some(_), Some(_)) => RouteTag::InRegion,
            (None, None) => RouteTag::OutRegion,
            _ => RouteTag::InOutRegion,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteResult {
    pub path: Path,
    pub tag: RouteTag,
    /// Region edges followed, empty when the answer came from a lookup or a
    /// plain fastest path.
    pub region_path: Vec<usize>,
    /// True when the plain fastest path was returned.
    pub fallback: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RouteCosts {
    #[serde(rename = "DI")]
    pub di: f64,
    #[serde(rename = "TT")]
    pub tt: f64,
    #[serde(rename = "FC")]
    pub fc: f64,
}

/// JSON shape of a routing answer, with original node ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RouteOutput {
    pub path: Vec<i64>,
    pub tag: RouteTag,
    pub costs: RouteCosts,
}

impl RouteResult {
    pub fn output(&self, net: &RoadNetwork) -> RouteOutput {
        RouteOutput {
            path: self.path.vertices().iter().map(|&v| net.original_id(v)).collect(),
            tag: self.tag,
            costs: RouteCosts {
                di: self.path.cost(net, CostKind::Distance),
                tt: self.path.cost(net, CostKind::TravelTime),
                fc: self.path.cost(net, CostKind::Fuel),
            },
        }
    }
}

fn rank(net: &RoadNetwork, a: &PathRecord, b: &PathRecord) -> Ordering {
    b.count
        .cmp(&a.count)
        .then_with(|| {
            a.path
                .cost(net, CostKind::TravelTime)
                .total_cmp(&b.path.cost(net, CostKind::TravelTime))
        })
        .then_with(|| a.path.vertices().cmp(b.path.vertices()))
}

fn best_record<'a>(net: &RoadNetwork, records: impl Iterator<Item = &'a PathRecord>) -> Option<&'a PathRecord> {
    records.min_by(|a, b| rank(net, a, b))
}

/// Greedy best-first search over usable region edges. Returns edge indices.
pub fn route_region_graph(model: &RegionGraphModel, rs: RegionId, rd: RegionId) -> Result<Vec<usize>> {
    let n = model.regions().len();
    if rs.index() >= n || rd.index() >= n || rs == rd {
        return Err(Error::InvalidArgument(format!(
            "region search needs two distinct regions, got {} and {}",
            rs.0, rd.0
        )));
    }
    let target = model.region(rd).centroid;
    let dist = |r: RegionId| {
        let c = model.region(r).centroid;
        planar_distance_m(c.0, c.1, target.0, target.1)
    };

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut discovered = vec![false; n];
    let mut closed = vec![false; n];
    // (distance, region) ordered by total order on the float bits
    let mut frontier: BTreeSet<(u64, u32)> = BTreeSet::new();
    discovered[rs.index()] = true;
    frontier.insert((dist(rs).to_bits(), rs.0));

    let mut found = false;
    while let Some((_, r)) = frontier.pop_first() {
        let r = RegionId(r);
        if r == rd {
            found = true;
            break;
        }
        closed[r.index()] = true;
        if let Some(e) = model.edge_between(r, rd).filter(|&e| model.edge(e).usable()) {
            parent[rd.index()] = Some(e);
            found = true;
            break;
        }
        for &e in model.out_edges(r) {
            let edge = model.edge(e);
            let next = edge.to;
            if !edge.usable() || closed[next.index()] || discovered[next.index()] {
                continue;
            }
            discovered[next.index()] = true;
            parent[next.index()] = Some(e);
            frontier.insert((dist(next).to_bits(), next.0));
        }
    }
    if !found {
        return Err(Error::NoRegionRoute { from: rs.index(), to: rd.index() });
    }

    let mut seq = Vec::new();
    let mut cur = rd;
    while cur != rs {
        let e = parent[cur.index()].expect("discovered region has a parent");
        seq.push(e);
        cur = model.edge(e).from;
    }
    seq.reverse();
    Ok(seq)
}

/// Read-only query engine over a model.
pub struct Router<'a> {
    net: &'a RoadNetwork,
    model: &'a RegionGraphModel,
    inner: HashMap<(VertexId, VertexId), &'a PathRecord>,
}

impl<'a> Router<'a> {
    pub fn new(net: &'a RoadNetwork, model: &'a RegionGraphModel) -> Self {
        let mut inner: HashMap<(VertexId, VertexId), &PathRecord> = HashMap::new();
        for r in model.regions() {
            for rec in model.inner_paths(r.id) {
                let key = (rec.path.source(), rec.path.target());
                match inner.get(&key) {
                    Some(cur) if rank(net, rec, cur) != Ordering::Less => {}
                    _ => {
                        inner.insert(key, rec);
                    }
                }
            }
        }
        Router { net, model, inner }
    }

    pub fn network(&self) -> &RoadNetwork {
        self.net
    }

    pub fn model(&self) -> &RegionGraphModel {
        self.model
    }

    /// Most traversed recorded inner path with exactly these endpoints.
    pub fn inner_path(&self, s: VertexId, d: VertexId) -> Option<&Path> {
        self.inner.get(&(s, d)).map(|r| &r.path)
    }

    fn connect(&self, region: RegionId, a: VertexId, b: VertexId) -> Result<Path> {
        if a == b {
            return Ok(Path::single(a));
        }
        if let Some(p) = self.inner_path(a, b) {
            return Ok(p.clone());
        }
        search::shortest_path(self.net, a, b, CostKind::TravelTime)
            .map_err(|_| Error::Unstitchable { region: region.index() })
    }

    /// Maps a region path to a road path from `entry` to `exit`.
    pub fn expand_region_path(&self, region_path: &[usize], entry: VertexId, exit: VertexId) -> Result<Path> {
        if region_path.is_empty() {
            return Err(Error::InvalidArgument("empty region path".into()));
        }
        let mut out = Path::single(entry);
        for &e in region_path {
            let edge = self.model.edge(e);
            let chosen = best_record(self.net, edge.paths.iter())
                .ok_or(Error::Unstitchable { region: edge.from.index() })?;
            let gap = self.connect(edge.from, out.target(), chosen.path.source())?;
            out.extend(&gap);
            out.extend(&chosen.path);
        }
        let last = self.model.edge(*region_path.last().unwrap()).to;
        let gap = self.connect(last, out.target(), exit)?;
        out.extend(&gap);
        Ok(out.erase_loops())
    }

    fn fastest(&self, s: VertexId, d: VertexId, tag: RouteTag) -> Result<RouteResult> {
        Ok(RouteResult {
            path: search::shortest_path(self.net, s, d, CostKind::TravelTime)?,
            tag,
            region_path: Vec::new(),
            fallback: true,
        })
    }

    fn via_regions(
        &self,
        rs: RegionId,
        rd: RegionId,
        entry: VertexId,
        exit: VertexId,
    ) -> Option<(Path, Vec<usize>)> {
        let seq = route_region_graph(self.model, rs, rd).ok()?;
        let path = self.expand_region_path(&seq, entry, exit).ok()?;
        Some((path, seq))
    }

    /// Answers one query. `departure` only selects which model is loaded by
    /// the caller and is accepted for interface parity.
    pub fn route(&self, s: VertexId, d: VertexId, _departure: Option<i64>) -> Result<RouteResult> {
        for v in [s, d] {
            if !self.net.contains(v) {
                return Err(Error::UnknownVertex(v.0 as i64));
            }
        }
        let rs = self.model.region_of(s);
        let rd = self.model.region_of(d);
        let tag = RouteTag::classify(rs, rd);

        match (rs, rd) {
            (Some(a), Some(b)) if a == b => {
                if let Some(p) = self.inner_path(s, d) {
                    return Ok(RouteResult {
                        path: p.clone(),
                        tag,
                        region_path: Vec::new(),
                        fallback: false,
                    });
                }
                self.fastest(s, d, tag)
            }
            (Some(a), Some(b)) => match self.via_regions(a, b, s, d) {
                Some((path, seq)) => Ok(RouteResult { path, tag, region_path: seq, fallback: false }),
                None => self.fastest(s, d, tag),
            },
            _ => {
                let regions = self.model.vertex_regions();
                let in_region = |v: VertexId| regions[v.index()].is_some();
                let forward = search::probe(self.net, s, CostKind::TravelTime, Direction::Forward, d, in_region);
                let backward = search::probe(self.net, d, CostKind::TravelTime, Direction::Backward, s, in_region);
                let (Some(ps), Some(pd)) = (forward, backward) else {
                    return self.fastest(s, d, tag);
                };
                let (u, w) = (ps.target(), pd.source());
                let (ru, rw) = (regions[u.index()].unwrap(), regions[w.index()].unwrap());
                if ru == rw {
                    return self.fastest(s, d, tag);
                }
                match self.via_regions(ru, rw, u, w) {
                    Some((mid, seq)) => {
                        let mut path = ps;
                        path.extend(&mid);
                        path.extend(&pd);
                        Ok(RouteResult {
                            path: path.erase_loops(),
                            tag,
                            region_path: seq,
                            fallback: false,
                        })
                    }
                    None => self.fastest(s, d, tag),
                }
            }
        }
    }
}

/// One-shot query without a reusable [`Router`].
pub fn route(
    model: &RegionGraphModel,
    net: &RoadNetwork,
    s: VertexId,
    d: VertexId,
    departure: Option<i64>,
) -> Result<RouteResult> {
    Router::new(net, model).route(s, d, departure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Region;
    use crate::netmodel::testnet::{build, vids};
    use crate::netmodel::{RoadType, Trajectory};
    use crate::region_graph::EdgeKind;

    const R: RoadType = RoadType::Residential;
    const P: RoadType = RoadType::Primary;

    fn region(id: u32, members: &[u32], rt: RoadType, net: &RoadNetwork) -> Region {
        let members = vids(members);
        let n = members.len() as f64;
        let (lon, lat) = members.iter().fold((0.0, 0.0), |acc, &v| {
            (acc.0 + net.vertex(v).lon, acc.1 + net.vertex(v).lat)
        });
        Region {
            id: RegionId(id),
            members,
            road_type: Some(rt),
            popularity: 1,
            centroid: (lon / n, lat / n),
        }
    }

    fn traj(id: i64, net: &RoadNetwork, vs: &[u32]) -> Trajectory {
        Trajectory {
            traj_id: id,
            driver_id: 0,
            departure: 0,
            path: crate::netmodel::validate_path(net, &vids(vs)).unwrap(),
        }
    }

    // Three regions in a line: A = {0,1,2}, B = {3,4,5}, C = {6,7}; 8 and 9 are
    // free vertices feeding into A and out of C.
    fn line() -> RoadNetwork {
        let mut edges = vec![
            (0, 1, 100.0, 50.0, R),
            (1, 2, 100.0, 50.0, R),
            (0, 2, 300.0, 50.0, R),
            (2, 3, 100.0, 50.0, P),
            (3, 4, 100.0, 50.0, P),
            (4, 5, 100.0, 50.0, P),
            (3, 5, 150.0, 50.0, P),
            (5, 6, 100.0, 50.0, R),
            (6, 7, 100.0, 50.0, R),
            (8, 0, 100.0, 50.0, R),
            (7, 9, 100.0, 50.0, R),
        ];
        let rev: Vec<_> = edges.iter().map(|&(a, b, l, s, t)| (b, a, l, s, t)).collect();
        edges.extend(rev);
        build(10, &edges)
    }

    fn line_model(net: &RoadNetwork, trajs: &[Trajectory]) -> RegionGraphModel {
        let regions = vec![
            region(0, &[0, 1, 2], R, net),
            region(1, &[3, 4, 5], P, net),
            region(2, &[6, 7], R, net),
        ];
        let mut m = RegionGraphModel::from_trajectories(net, regions, trajs).unwrap();
        m.build_b_edges(net);
        m
    }

    #[test]
    fn same_region_returns_most_traversed_inner_path() {
        let net = line();
        let trajs = vec![
            traj(1, &net, &[0, 1, 2, 3]),
            traj(2, &net, &[0, 1, 2, 3]),
            traj(3, &net, &[0, 2, 3]),
        ];
        let model = line_model(&net, &trajs);
        let r = route(&model, &net, VertexId(0), VertexId(2), None).unwrap();
        assert_eq!(r.tag, RouteTag::SameRegion);
        assert_eq!(r.path.vertices(), vids(&[0, 1, 2]).as_slice());
        assert!(!r.fallback);
    }

    #[test]
    fn distinct_regions_follow_region_edges_and_inner_connector() {
        let net = line();
        // T-edge A->B ends at 3, B->C starts at 5; inner path 3-4-5 recorded
        // twice, so it wins over the shorter 3-5 edge.
        let trajs = vec![
            traj(1, &net, &[1, 2, 3]),
            traj(2, &net, &[5, 6, 7]),
            traj(3, &net, &[3, 4, 5]),
            traj(4, &net, &[3, 4, 5]),
        ];
        let model = line_model(&net, &trajs);
        let router = Router::new(&net, &model);
        let r = router.route(VertexId(1), VertexId(7), None).unwrap();
        assert_eq!(r.tag, RouteTag::InRegion);
        assert_eq!(r.path.vertices(), vids(&[1, 2, 3, 4, 5, 6, 7]).as_slice());
        assert_eq!(r.region_path.len(), 2);
        r.path.check(&net).unwrap();
    }

    #[test]
    fn direct_region_edge_is_taken() {
        let net = line();
        let trajs = vec![traj(1, &net, &[1, 2, 3, 4, 5, 6, 7])];
        let model = line_model(&net, &trajs);
        let seq = route_region_graph(&model, RegionId(0), RegionId(2)).unwrap();
        assert_eq!(seq.len(), 1);
        let e = model.edge(seq[0]);
        assert_eq!((e.from, e.to, e.kind), (RegionId(0), RegionId(2), EdgeKind::T));
    }

    #[test]
    fn out_of_region_source_gets_fastest_prefix() {
        let net = line();
        let trajs = vec![traj(1, &net, &[1, 2, 3, 4, 5, 6, 7])];
        let model = line_model(&net, &trajs);
        let r = route(&model, &net, VertexId(8), VertexId(6), None).unwrap();
        assert_eq!(r.tag, RouteTag::InOutRegion);
        assert_eq!(r.path.source(), VertexId(8));
        assert_eq!(r.path.target(), VertexId(6));
        let prefix = search::shortest_path(&net, VertexId(8), VertexId(0), CostKind::TravelTime).unwrap();
        assert_eq!(&r.path.vertices()[..2], prefix.vertices());
    }

    #[test]
    fn no_regions_falls_back_to_fastest() {
        let net = line();
        let model = RegionGraphModel::from_trajectories(&net, Vec::new(), &[]).unwrap();
        let r = route(&model, &net, VertexId(8), VertexId(9), None).unwrap();
        let fastest = search::shortest_path(&net, VertexId(8), VertexId(9), CostKind::TravelTime).unwrap();
        assert_eq!(r.path, fastest);
        assert!(r.fallback);
        assert_eq!(r.tag, RouteTag::OutRegion);
    }

    #[test]
    fn greedy_prefers_region_closer_to_target() {
        // Regions laid out on a plane: 0 at origin, 1 and 2 both adjacent to
        // 0, 3 the target. 2 is closer to 3 so the search goes through it.
        let mut edges = Vec::new();
        for &(a, b) in &[(0, 1), (0, 2), (1, 3), (2, 3)] {
            edges.push((a, b, 100.0, 50.0, R));
        }
        let mut net = build(4, &edges);
        let coords = [(0.0, 0.0), (0.0, 0.01), (0.01, 0.0), (0.012, 0.002)];
        let mut vs = net.vertices().to_vec();
        for (v, c) in vs.iter_mut().zip(coords) {
            v.lon = c.0;
            v.lat = c.1;
        }
        net = RoadNetwork::new(vs, net.edges().to_vec(), net.fuel_model()).unwrap();
        let regions = (0..4).map(|i| region(i, &[i], R, &net)).collect();
        let mut model = RegionGraphModel::from_trajectories(&net, regions, &[]).unwrap();
        model.build_b_edges(&net);
        for e in model.edges_mut() {
            let (a, b) = (VertexId(e.from.0), VertexId(e.to.0));
            if let Some(id) = net.edge_between(a, b) {
                let p = Path::from_edges(&net, a, vec![id]);
                e.paths.push(PathRecord::computed(p));
            }
        }
        let seq = route_region_graph(&model, RegionId(0), RegionId(3)).unwrap();
        let hops: Vec<_> = seq.iter().map(|&e| model.edge(e).to.0).collect();
        assert_eq!(hops, vec![2, 3]);
    }

    #[test]
    fn unreachable_target_region_errors() {
        let net = build(2, &[(0, 1, 100.0, 50.0, R)]);
        let regions = vec![region(0, &[0], R, &net), region(1, &[1], R, &net)];
        let model = RegionGraphModel::from_trajectories(&net, regions, &[]).unwrap();
        assert!(matches!(
            route_region_graph(&model, RegionId(0), RegionId(1)),
            Err(Error::NoRegionRoute { .. })
        ));
    }
}
