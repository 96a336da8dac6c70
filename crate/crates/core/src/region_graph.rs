//! The region graph: regions as vertices, T-edges from trajectories that
//! cross between regions and B-edges between topologically adjacent regions.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{Region, RegionId};
use crate::error::{Error, Result};
use crate::netmodel::{Path, RoadNetwork, Trajectory, VertexId};
use crate::preference::PreferenceVector;

/// A path attached to a region edge or region, with its observation count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path: Path,
    pub count: u32,
    /// Computed rather than observed.
    #[serde(default)]
    pub synthetic: bool,
}

impl PathRecord {
    pub fn observed(path: Path, count: u32) -> Self {
        PathRecord {
            path,
            count,
            synthetic: false,
        }
    }

    pub fn computed(path: Path) -> Self {
        PathRecord {
            path,
            count: 0,
            synthetic: true,
        }
    }

    pub fn weight(&self) -> f64 {
        self.count as f64
    }
}

/// Collects paths, merging identical vertex sequences into one record.
#[derive(Default)]
struct PathBag {
    records: Vec<PathRecord>,
    index: HashMap<Vec<VertexId>, usize>,
}

impl PathBag {
    fn add(&mut self, path: Path) {
        match self.index.get(path.vertices()) {
            Some(&i) => self.records[i].count += 1,
            None => {
                self.index.insert(path.vertices().to_vec(), self.records.len());
                self.records.push(PathRecord::observed(path, 1));
            }
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Backed by observed trajectories.
    T,
    /// Topological adjacency only.
    B,
}

/// How a region edge obtained its preference.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceSource {
    Learned,
    Transferred,
    /// Transfer yielded nothing; routed as fastest.
    NullFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEdge {
    pub from: RegionId,
    pub to: RegionId,
    pub kind: EdgeKind,
    pub paths: Vec<PathRecord>,
    /// `None` until learned or transferred; also `None` for a null transfer.
    pub preference: Option<PreferenceVector>,
    pub preference_source: Option<PreferenceSource>,
    /// A B-edge for which no transfer-center pair is connected.
    #[serde(default)]
    pub dead: bool,
}

impl RegionEdge {
    fn new(from: RegionId, to: RegionId, kind: EdgeKind) -> Self {
        RegionEdge {
            from,
            to,
            kind,
            paths: Vec::new(),
            preference: None,
            preference_source: None,
            dead: false,
        }
    }

    /// Whether routing may traverse this edge.
    pub fn usable(&self) -> bool {
        !self.dead && !self.paths.is_empty()
    }
}

/// Maximal run of consecutive path positions inside one region.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Visit {
    pub region: RegionId,
    pub start: usize,
    pub end: usize,
}

/// Splits a vertex sequence into region visits. Vertices outside every
/// region end a run and start none.
pub fn visits(vertex_region: &[Option<RegionId>], vertices: &[VertexId]) -> Vec<Visit> {
    let mut out: Vec<Visit> = Vec::new();
    for (i, v) in vertices.iter().enumerate() {
        let r = vertex_region.get(v.index()).copied().flatten();
        match (r, out.last_mut()) {
            (Some(r), Some(last)) if last.region == r && last.end + 1 == i => last.end = i,
            (Some(r), _) => out.push(Visit {
                region: r,
                start: i,
                end: i,
            }),
            (None, _) => {}
        }
    }
    out
}

/// A crossing point where trajectories enter or leave a region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferCenter {
    pub vertex: VertexId,
    pub count: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "RegionGraphData", into = "RegionGraphData")]
pub struct RegionGraphModel {
    regions: Vec<Region>,
    vertex_region: Vec<Option<RegionId>>,
    transfer_centers: Vec<Vec<TransferCenter>>,
    inner_paths: Vec<Vec<PathRecord>>,
    edges: Vec<RegionEdge>,
    edge_index: HashMap<(RegionId, RegionId), usize>,
    out_edges: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RegionGraphData {
    regions: Vec<Region>,
    vertex_count: usize,
    transfer_centers: Vec<Vec<TransferCenter>>,
    inner_paths: Vec<Vec<PathRecord>>,
    edges: Vec<RegionEdge>,
}

impl From<RegionGraphData> for RegionGraphModel {
    fn from(d: RegionGraphData) -> Self {
        let mut g = RegionGraphModel::empty(d.regions, d.vertex_count);
        g.transfer_centers = d.transfer_centers;
        g.inner_paths = d.inner_paths;
        for e in d.edges {
            g.push_edge(e);
        }
        g
    }
}

impl From<RegionGraphModel> for RegionGraphData {
    fn from(g: RegionGraphModel) -> Self {
        RegionGraphData {
            vertex_count: g.vertex_region.len(),
            regions: g.regions,
            transfer_centers: g.transfer_centers,
            inner_paths: g.inner_paths,
            edges: g.edges,
        }
    }
}

impl RegionGraphModel {
    fn empty(regions: Vec<Region>, vertex_count: usize) -> Self {
        let mut vertex_region = vec![None; vertex_count];
        for r in &regions {
            for &v in &r.members {
                vertex_region[v.index()] = Some(r.id);
            }
        }
        let n = regions.len();
        RegionGraphModel {
            regions,
            vertex_region,
            transfer_centers: vec![Vec::new(); n],
            inner_paths: vec![Vec::new(); n],
            edges: Vec::new(),
            edge_index: HashMap::new(),
            out_edges: vec![Vec::new(); n],
        }
    }

    fn push_edge(&mut self, e: RegionEdge) -> usize {
        let id = self.edges.len();
        self.edge_index.insert((e.from, e.to), id);
        self.out_edges[e.from.index()].push(id);
        self.edges.push(e);
        id
    }

    /// T-edges, transfer centers and inner paths from training trajectories.
    pub fn from_trajectories(
        net: &RoadNetwork,
        regions: Vec<Region>,
        trajectories: &[Trajectory],
    ) -> Result<Self> {
        for (i, r) in regions.iter().enumerate() {
            if r.id.index() != i {
                return Err(Error::Model(format!("region {} stored at position {i}", r.id.0)));
            }
            if let Some(v) = r.members.iter().find(|v| !net.contains(**v)) {
                return Err(Error::UnknownVertex(v.0 as i64));
            }
        }
        let mut g = RegionGraphModel::empty(regions, net.vertex_count());
        let mut bags: Vec<PathBag> = Vec::new();
        let mut inner: Vec<PathBag> = (0..g.regions.len()).map(|_| PathBag::default()).collect();
        let mut centers: Vec<HashMap<VertexId, u32>> = vec![HashMap::new(); g.regions.len()];
        let mut center_order: Vec<Vec<VertexId>> = vec![Vec::new(); g.regions.len()];
        let mut bump = |r: RegionId, v: VertexId| {
            let c = centers[r.index()].entry(v).or_insert_with(|| {
                center_order[r.index()].push(v);
                0
            });
            *c += 1;
        };

        for t in trajectories {
            let path = &t.path;
            let vs = visits(&g.vertex_region, path.vertices());
            for w in vs.windows(2) {
                bump(w[0].region, path.vertices()[w[0].end]);
                bump(w[1].region, path.vertices()[w[1].start]);
            }
            for v in &vs {
                inner[v.region.index()].add(path.slice(v.start, v.end));
            }
            // distinct regions in order of first entry, with that visit index
            let mut first: Vec<(RegionId, usize)> = Vec::new();
            for (i, v) in vs.iter().enumerate() {
                if !first.iter().any(|&(r, _)| r == v.region) {
                    first.push((v.region, i));
                }
            }
            for a in 0..first.len() {
                for &(rb, jb) in &first[a + 1..] {
                    let ra = first[a].0;
                    let ia = (0..jb)
                        .rev()
                        .find(|&i| vs[i].region == ra)
                        .expect("region entered before");
                    let sub = path.slice(vs[ia].end, vs[jb].start);
                    let id = match g.edge_index.get(&(ra, rb)) {
                        Some(&id) => id,
                        None => {
                            bags.push(PathBag::default());
                            g.push_edge(RegionEdge::new(ra, rb, EdgeKind::T))
                        }
                    };
                    bags[id].add(sub);
                }
            }
        }

        for (e, bag) in g.edges.iter_mut().zip(bags) {
            e.paths = bag.records;
        }
        g.inner_paths = inner.into_iter().map(|b| b.records).collect();
        g.transfer_centers = center_order
            .into_iter()
            .zip(&centers)
            .map(|(order, counts)| {
                order
                    .into_iter()
                    .map(|v| TransferCenter {
                        vertex: v,
                        count: counts[&v],
                    })
                    .collect()
            })
            .collect();
        Ok(g)
    }

    /// Adds a B-edge in each direction that lacks an edge between every pair
    /// of regions joined by road segments outside all other regions.
    /// Returns the number of B-edges added.
    pub fn build_b_edges(&mut self, net: &RoadNetwork) -> usize {
        let reached: Vec<Vec<RegionId>> = self
            .regions
            .par_iter()
            .map(|r| adjacent_regions(net, &self.vertex_region, r))
            .collect();
        let before = self.edges.len();
        for (i, targets) in reached.into_iter().enumerate() {
            let ri = RegionId(i as u32);
            for rj in targets {
                for (a, b) in [(ri, rj), (rj, ri)] {
                    if !self.edge_index.contains_key(&(a, b)) {
                        self.push_edge(RegionEdge::new(a, b, EdgeKind::B));
                    }
                }
            }
        }
        self.edges.len() - before
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, r: RegionId) -> &Region {
        &self.regions[r.index()]
    }

    pub fn region_of(&self, v: VertexId) -> Option<RegionId> {
        self.vertex_region.get(v.index()).copied().flatten()
    }

    pub fn vertex_regions(&self) -> &[Option<RegionId>] {
        &self.vertex_region
    }

    pub fn transfer_centers(&self, r: RegionId) -> &[TransferCenter] {
        &self.transfer_centers[r.index()]
    }

    pub fn inner_paths(&self, r: RegionId) -> &[PathRecord] {
        &self.inner_paths[r.index()]
    }

    pub fn edges(&self) -> &[RegionEdge] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [RegionEdge] {
        &mut self.edges
    }

    pub fn edge(&self, id: usize) -> &RegionEdge {
        &self.edges[id]
    }

    pub fn edge_between(&self, from: RegionId, to: RegionId) -> Option<usize> {
        self.edge_index.get(&(from, to)).copied()
    }

    pub fn out_edges(&self, r: RegionId) -> &[usize] {
        &self.out_edges[r.index()]
    }

    pub fn t_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::T).count()
    }

    pub fn b_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::B).count()
    }

    /// Whether the region graph, ignoring edge direction, is connected.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.regions.len();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.from.index()].push(e.to.index());
            adj[e.to.index()].push(e.from.index());
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &x in &adj[u] {
                if !seen[x] {
                    seen[x] = true;
                    stack.push(x);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Regions reachable from `region` through vertices not owned by another
/// region, following edges in either direction.
fn adjacent_regions(
    net: &RoadNetwork,
    vertex_region: &[Option<RegionId>],
    region: &Region,
) -> Vec<RegionId> {
    let mut seen = vec![false; net.vertex_count()];
    let mut queue: VecDeque<VertexId> = VecDeque::new();
    for &v in &region.members {
        seen[v.index()] = true;
        queue.push_back(v);
    }
    let mut found = Vec::new();
    while let Some(u) = queue.pop_front() {
        let neighbors = net
            .out_edges(u)
            .iter()
            .map(|&e| net.edge(e).to)
            .chain(net.in_edges(u).iter().map(|&e| net.edge(e).from));
        for x in neighbors {
            if seen[x.index()] {
                continue;
            }
            seen[x.index()] = true;
            match vertex_region[x.index()] {
                Some(r) if r != region.id => found.push(r),
                _ => queue.push_back(x),
            }
        }
    }
    found.sort_unstable();
    found.dedup();
    found
}

/// T-edges, transfer centers and inner paths; see
/// [`RegionGraphModel::from_trajectories`].
pub fn build_t_edges(
    net: &RoadNetwork,
    regions: Vec<Region>,
    trajectories: &[Trajectory],
) -> Result<RegionGraphModel> {
    RegionGraphModel::from_trajectories(net, regions, trajectories)
}

/// Per-region inner-path sets.
pub fn extract_inner_paths(
    net: &RoadNetwork,
    regions: Vec<Region>,
    trajectories: &[Trajectory],
) -> Result<Vec<Vec<PathRecord>>> {
    let g = RegionGraphModel::from_trajectories(net, regions, trajectories)?;
    Ok(g.inner_paths)
}

pub fn build_b_edges(net: &RoadNetwork, model: &mut RegionGraphModel) -> usize {
    model.build_b_edges(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testnet::{build, vids};
    use crate::netmodel::{validate_path, RoadType};

    const R: RoadType = RoadType::Residential;

    fn region(id: u32, members: &[u32]) -> Region {
        Region {
            id: RegionId(id),
            members: vids(members),
            road_type: Some(R),
            popularity: 0,
            centroid: (0.0, 0.0),
        }
    }

    fn line(n: u32) -> RoadNetwork {
        let edges: Vec<_> = (0..n - 1)
            .flat_map(|i| [(i, i + 1, 100.0, 36.0, R), (i + 1, i, 100.0, 36.0, R)])
            .collect();
        build(n as usize, &edges)
    }

    fn traj(net: &RoadNetwork, ids: &[u32]) -> Trajectory {
        Trajectory {
            traj_id: 0,
            driver_id: 0,
            departure: 0,
            path: validate_path(net, &vids(ids)).unwrap(),
        }
    }

    #[test]
    fn visit_runs() {
        let vr = vec![Some(RegionId(0)), Some(RegionId(0)), None, Some(RegionId(1)), Some(RegionId(0))];
        let v = visits(&vr, &vids(&[0, 1, 3, 4, 2, 0]));
        let regions: Vec<u32> = v.iter().map(|x| x.region.0).collect();
        assert_eq!(regions, vec![0, 1, 0, 0]);
        assert_eq!((v[0].start, v[0].end), (0, 1));
    }

    #[test]
    fn three_region_trajectory_gives_three_t_edges() {
        let net = line(6);
        let regions = vec![region(0, &[0, 1]), region(1, &[2, 3]), region(2, &[4, 5])];
        let g = RegionGraphModel::from_trajectories(&net, regions, &[traj(&net, &[0, 1, 2, 3, 4, 5])]).unwrap();
        assert_eq!(g.edges().len(), 3);
        let e = g.edge(g.edge_between(RegionId(0), RegionId(2)).unwrap());
        assert_eq!(e.paths[0].path.vertices(), vids(&[1, 2, 3, 4]).as_slice());
        let e = g.edge(g.edge_between(RegionId(0), RegionId(1)).unwrap());
        assert_eq!(e.paths[0].path.vertices(), vids(&[1, 2]).as_slice());
        assert!(g.edges().iter().all(|e| e.kind == EdgeKind::T));
        let inner: Vec<&[VertexId]> = g.inner_paths(RegionId(1)).iter().map(|p| p.path.vertices()).collect();
        assert_eq!(inner, vec![vids(&[2, 3]).as_slice()]);
        let centers: Vec<u32> = g.transfer_centers(RegionId(1)).iter().map(|c| c.vertex.0).collect();
        assert_eq!(centers, vec![2, 3]);
        assert_eq!(g.transfer_centers(RegionId(0))[0].vertex, VertexId(1));
    }

    #[test]
    fn identical_paths_are_counted() {
        let net = line(4);
        let regions = vec![region(0, &[0, 1]), region(1, &[2, 3])];
        let t = traj(&net, &[0, 1, 2, 3]);
        let g = RegionGraphModel::from_trajectories(&net, regions, &[t.clone(), t]).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].paths.len(), 1);
        assert_eq!(g.edges()[0].paths[0].count, 2);
        assert_eq!(g.transfer_centers(RegionId(0))[0].count, 2);
    }

    #[test]
    fn revisit_uses_last_exit_before_entry() {
        let net = line(6);
        // region 0 = {0, 1, 4}, region 1 = {2}, region 2 = {5}; 3 is outside
        let regions = vec![region(0, &[0, 1, 4]), region(1, &[2]), region(2, &[5])];
        let g = RegionGraphModel::from_trajectories(&net, regions, &[traj(&net, &[0, 1, 2, 3, 4, 5])]).unwrap();
        let e = g.edge(g.edge_between(RegionId(0), RegionId(2)).unwrap());
        assert_eq!(e.paths[0].path.vertices(), vids(&[4, 5]).as_slice());
        let e = g.edge(g.edge_between(RegionId(1), RegionId(2)).unwrap());
        assert_eq!(e.paths[0].path.vertices(), vids(&[2, 3, 4, 5]).as_slice());
        assert!(g.edge_between(RegionId(2), RegionId(0)).is_none());
        assert_eq!(g.inner_paths(RegionId(0)).len(), 2);
    }

    #[test]
    fn b_edges_fill_missing_directions() {
        let net = line(7);
        // region 1 and 2 are separated by the unclustered vertex 4
        let regions = vec![region(0, &[0, 1]), region(1, &[2, 3]), region(2, &[5, 6])];
        let mut g = RegionGraphModel::from_trajectories(&net, regions, &[traj(&net, &[0, 1, 2, 3])]).unwrap();
        assert_eq!(g.edges().len(), 1);
        let added = g.build_b_edges(&net);
        assert_eq!(added, 3);
        assert_eq!(g.edge(g.edge_between(RegionId(0), RegionId(1)).unwrap()).kind, EdgeKind::T);
        assert_eq!(g.edge(g.edge_between(RegionId(1), RegionId(0)).unwrap()).kind, EdgeKind::B);
        assert!(g.edge_between(RegionId(1), RegionId(2)).is_some());
        assert!(g.edge_between(RegionId(2), RegionId(1)).is_some());
        // region 1 blocks the way from 0 to 2
        assert!(g.edge_between(RegionId(0), RegionId(2)).is_none());
        assert!(g.is_weakly_connected());
        assert_eq!(g.build_b_edges(&net), 0);
    }

    #[test]
    fn serde_round_trip_rebuilds_indexes() {
        let net = line(4);
        let regions = vec![region(0, &[0, 1]), region(1, &[2, 3])];
        let mut g = RegionGraphModel::from_trajectories(&net, regions, &[traj(&net, &[0, 1, 2, 3])]).unwrap();
        g.build_b_edges(&net);
        let json = serde_json::to_string(&g).unwrap();
        let back: RegionGraphModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.edge_between(RegionId(1), RegionId(0)), Some(1));
        assert_eq!(back.region_of(VertexId(3)), Some(RegionId(1)));
        assert_eq!(back.out_edges(RegionId(0)), &[0]);
    }
}
