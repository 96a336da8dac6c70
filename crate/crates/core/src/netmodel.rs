//! Road network, path and trajectory representations.
//!
//! The network is a directed graph. Vertex and edge ids are dense indices
//! assigned at load time; the ids found in input files are kept on each
//! record as `original_id`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

impl VertexId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for VertexId {
    fn from(i: usize) -> Self {
        VertexId(i as u32)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl EdgeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for EdgeId {
    fn from(i: usize) -> Self {
        EdgeId(i as u32)
    }
}

/// OpenStreetMap road classes, ordered from motorway (code 1) to residential (code 6).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadType {
    Motorway,
    Trunk,
    Primary,
    Secondary,
    Tertiary,
    Residential,
}

impl RoadType {
    pub const ALL: [RoadType; 6] = [
        RoadType::Motorway,
        RoadType::Trunk,
        RoadType::Primary,
        RoadType::Secondary,
        RoadType::Tertiary,
        RoadType::Residential,
    ];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<RoadType> {
        match code {
            1..=6 => Some(Self::ALL[code as usize - 1]),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadType::Motorway => "motorway",
            RoadType::Trunk => "trunk",
            RoadType::Primary => "primary",
            RoadType::Secondary => "secondary",
            RoadType::Tertiary => "tertiary",
            RoadType::Residential => "residential",
        }
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoadType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown road type {s:?}"))
    }
}

/// Travel cost features: distance, travel time and fuel consumption.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CostKind {
    #[serde(rename = "DI")]
    Distance,
    #[serde(rename = "TT")]
    TravelTime,
    #[serde(rename = "FC")]
    Fuel,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::Distance, CostKind::TravelTime, CostKind::Fuel];

    pub fn abbrev(self) -> &'static str {
        match self {
            CostKind::Distance => "DI",
            CostKind::TravelTime => "TT",
            CostKind::Fuel => "FC",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for CostKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DI" | "di" => Ok(CostKind::Distance),
            "TT" | "tt" => Ok(CostKind::TravelTime),
            "FC" | "fc" => Ok(CostKind::Fuel),
            _ => Err(format!("unknown cost feature {s:?}")),
        }
    }
}

/// Per-edge fuel model `FC = length_km * (a + b / v + c * v^2)` with `v` in km/h
/// and the result in liters.
///
/// The curve is convex in speed with its minimum near 44 km/h for the default
/// constants, so fuel-optimal routes avoid both slow streets and fast roads.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuelModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for FuelModel {
    fn default() -> Self {
        FuelModel {
            a: 0.17,
            b: 2.1,
            c: 0.000012,
        }
    }
}

impl FuelModel {
    pub fn liters(&self, length_m: f64, speed_kmh: f64) -> f64 {
        let v = speed_kmh;
        length_m / 1000.0 * (self.a + self.b / v + self.c * v * v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub original_id: i64,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub original_id: i64,
    pub from: VertexId,
    pub to: VertexId,
    pub length_m: f64,
    pub speed_kmh: f64,
    pub road_type: RoadType,
}

impl Edge {
    pub fn travel_time_s(&self) -> f64 {
        self.length_m / (self.speed_kmh / 3.6)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetworkData {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    #[serde(default)]
    fuel: FuelModel,
}

/// Directed road network with distance, travel-time, fuel and road-type weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct RoadNetwork {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<EdgeId>>,
    in_adj: Vec<Vec<EdgeId>>,
    by_original: HashMap<i64, VertexId>,
    fuel: FuelModel,
    // Cached per-kind edge weights, indexed by edge.
    weights: [Vec<f64>; 3],
}

impl TryFrom<NetworkData> for RoadNetwork {
    type Error = Error;

    fn try_from(data: NetworkData) -> Result<Self> {
        RoadNetwork::new(data.vertices, data.edges, data.fuel)
    }
}

impl From<RoadNetwork> for NetworkData {
    fn from(net: RoadNetwork) -> Self {
        NetworkData {
            vertices: net.vertices,
            edges: net.edges,
            fuel: net.fuel,
        }
    }
}

impl RoadNetwork {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>, fuel: FuelModel) -> Result<Self> {
        let n = vertices.len();
        let mut by_original = HashMap::with_capacity(n);
        for (i, v) in vertices.iter().enumerate() {
            if by_original.insert(v.original_id, VertexId::from(i)).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate vertex id {}",
                    v.original_id
                )));
            }
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.from.index() >= n || e.to.index() >= n {
                return Err(Error::InvalidNetwork(format!(
                    "edge {} references a vertex outside the network",
                    e.original_id
                )));
            }
            if !(e.length_m > 0.0 && e.length_m.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "edge {} has nonpositive length {}",
                    e.original_id, e.length_m
                )));
            }
            if !(e.speed_kmh > 0.0 && e.speed_kmh.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "edge {} has nonpositive speed {}",
                    e.original_id, e.speed_kmh
                )));
            }
            out_adj[e.from.index()].push(EdgeId::from(i));
            in_adj[e.to.index()].push(EdgeId::from(i));
        }
        let weights = [
            edges.iter().map(|e| e.length_m).collect(),
            edges.iter().map(|e| e.travel_time_s()).collect(),
            edges
                .iter()
                .map(|e| fuel.liters(e.length_m, e.speed_kmh))
                .collect(),
        ];
        Ok(RoadNetwork {
            vertices,
            edges,
            out_adj,
            in_adj,
            by_original,
            fuel,
            weights,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.index()]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.index()]
    }

    pub fn fuel_model(&self) -> FuelModel {
        self.fuel
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v.index() < self.vertices.len()
    }

    pub fn out_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.out_adj[v.index()]
    }

    pub fn in_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.in_adj[v.index()]
    }

    pub fn vertex_by_original(&self, original: i64) -> Option<VertexId> {
        self.by_original.get(&original).copied()
    }

    pub fn original_id(&self, v: VertexId) -> i64 {
        self.vertices
            .get(v.index())
            .map(|x| x.original_id)
            .unwrap_or(v.0 as i64)
    }

    /// Lowest-id edge from `a` to `b`, if any.
    pub fn edge_between(&self, a: VertexId, b: VertexId) -> Option<EdgeId> {
        self.out_adj
            .get(a.index())?
            .iter()
            .copied()
            .filter(|&e| self.edges[e.index()].to == b)
            .min()
    }

    /// Weight of a known edge under a cost feature.
    #[inline]
    pub fn weight(&self, e: EdgeId, kind: CostKind) -> f64 {
        self.weights[kind as usize][e.index()]
    }

    pub fn edge_weight(&self, e: EdgeId, kind: CostKind) -> Result<f64> {
        if e.index() >= self.edges.len() {
            return Err(Error::UnknownEdge(e.index()));
        }
        Ok(self.weight(e, kind))
    }
}

pub fn edge_weight(net: &RoadNetwork, edge: EdgeId, kind: CostKind) -> Result<f64> {
    net.edge_weight(edge, kind)
}

/// A vertex sequence through the network together with the edges joining
/// consecutive vertices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    vertices: Vec<VertexId>,
    edges: Vec<EdgeId>,
}

impl Path {
    pub fn single(v: VertexId) -> Path {
        Path {
            vertices: vec![v],
            edges: Vec::new(),
        }
    }

    /// Builds a path from a start vertex and a chain of edges. The caller
    /// guarantees the chain is connected.
    pub(crate) fn from_edges(net: &RoadNetwork, start: VertexId, edges: Vec<EdgeId>) -> Path {
        let mut vertices = Vec::with_capacity(edges.len() + 1);
        vertices.push(start);
        for &e in &edges {
            debug_assert_eq!(net.edge(e).from, *vertices.last().unwrap());
            vertices.push(net.edge(e).to);
        }
        Path { vertices, edges }
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn source(&self) -> VertexId {
        self.vertices[0]
    }

    pub fn target(&self) -> VertexId {
        *self.vertices.last().unwrap()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.edges.is_empty()
    }

    /// Sub-path spanning vertex positions `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Path {
        assert!(from <= to && to < self.vertices.len());
        Path {
            vertices: self.vertices[from..=to].to_vec(),
            edges: self.edges[from..to].to_vec(),
        }
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn extend(&mut self, other: &Path) {
        assert_eq!(self.target(), other.source(), "paths do not share a junction");
        self.vertices.extend_from_slice(&other.vertices[1..]);
        self.edges.extend_from_slice(&other.edges);
    }

    /// Removes cycles: whenever a vertex repeats, the loop between its
    /// occurrences is dropped.
    pub fn erase_loops(&self) -> Path {
        let mut vertices: Vec<VertexId> = Vec::with_capacity(self.vertices.len());
        let mut edges: Vec<EdgeId> = Vec::with_capacity(self.edges.len());
        let mut pos: HashMap<VertexId, usize> = HashMap::new();
        for (i, &v) in self.vertices.iter().enumerate() {
            if let Some(&p) = pos.get(&v) {
                for dropped in vertices.drain(p + 1..) {
                    pos.remove(&dropped);
                }
                edges.truncate(p);
                continue;
            }
            if i > 0 {
                edges.push(self.edges[i - 1]);
            }
            pos.insert(v, vertices.len());
            vertices.push(v);
        }
        Path { vertices, edges }
    }

    /// Checks that every edge joins its neighbouring vertices in `net`.
    pub fn check(&self, net: &RoadNetwork) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::EmptyPath);
        }
        if self.edges.len() + 1 != self.vertices.len() {
            return Err(Error::InvalidArgument(
                "path edge count does not match vertex count".into(),
            ));
        }
        for &v in &self.vertices {
            if !net.contains(v) {
                return Err(Error::UnknownVertex(v.0 as i64));
            }
        }
        for (i, &e) in self.edges.iter().enumerate() {
            let (a, b) = (self.vertices[i], self.vertices[i + 1]);
            let ok = e.index() < net.edge_count() && {
                let edge = net.edge(e);
                edge.from == a && edge.to == b
            };
            if !ok {
                return Err(Error::MissingEdge {
                    from: net.original_id(a),
                    to: net.original_id(b),
                });
            }
        }
        Ok(())
    }

    /// Cost of a path already known to be valid on `net`.
    pub fn cost(&self, net: &RoadNetwork, kind: CostKind) -> f64 {
        self.edges.iter().map(|&e| net.weight(e, kind)).sum()
    }

    pub fn length_m(&self, net: &RoadNetwork) -> f64 {
        self.cost(net, CostKind::Distance)
    }
}

/// Resolves a vertex sequence into a path, using the lowest-id edge for each
/// consecutive pair.
pub fn validate_path(net: &RoadNetwork, vertex_ids: &[VertexId]) -> Result<Path> {
    let Some(&first) = vertex_ids.first() else {
        return Err(Error::EmptyPath);
    };
    for &v in vertex_ids {
        if !net.contains(v) {
            return Err(Error::UnknownVertex(v.0 as i64));
        }
    }
    let mut edges = Vec::with_capacity(vertex_ids.len().saturating_sub(1));
    for w in vertex_ids.windows(2) {
        let e = net.edge_between(w[0], w[1]).ok_or(Error::MissingEdge {
            from: net.original_id(w[0]),
            to: net.original_id(w[1]),
        })?;
        edges.push(e);
    }
    Ok(Path::from_edges(net, first, edges))
}

/// Sum of edge weights along `path`. A single-vertex path costs 0.
pub fn path_cost(net: &RoadNetwork, path: &Path, kind: CostKind) -> Result<f64> {
    path.check(net)?;
    Ok(path.cost(net, kind))
}

/// A map-matched trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub traj_id: i64,
    pub driver_id: i64,
    /// Departure time in epoch seconds.
    pub departure: i64,
    pub path: Path,
}

/// Equirectangular distance in meters, accurate at city scale.
pub fn planar_distance_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    const EARTH_RADIUS_M: f64 = 6_371_008.8;
    let mean_lat = ((lat1 + lat2) / 2.0).to_radians();
    let dx = (lon2 - lon1).to_radians() * mean_lat.cos();
    let dy = (lat2 - lat1).to_radians();
    EARTH_RADIUS_M * (dx * dx + dy * dy).sqrt()
}


#[cfg(test)]
mod tests {
    use super::testnet::{build, vids};
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const R: RoadType = RoadType::Residential;

    #[test]
    fn road_type_codes_are_a_bijection() {
        for (i, t) in RoadType::ALL.iter().enumerate() {
            assert_eq!(t.code() as usize, i + 1);
            assert_eq!(RoadType::from_code(t.code()), Some(*t));
            assert_eq!(t.name().parse::<RoadType>().unwrap(), *t);
        }
        assert_eq!(RoadType::from_code(0), None);
        assert_eq!(RoadType::from_code(7), None);
        assert!(RoadType::Motorway < RoadType::Residential);
    }

    #[test]
    fn distance_and_travel_time_weights() {
        let net = build(2, &[(0, 1, 100.0, 36.0, R)]);
        assert_eq!(edge_weight(&net, EdgeId(0), CostKind::Distance).unwrap(), 100.0);
        assert_relative_eq!(
            edge_weight(&net, EdgeId(0), CostKind::TravelTime).unwrap(),
            10.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fuel_weight_matches_hand_evaluation() {
        // 1 km at 50 km/h: 0.17 + 2.1/50 + 0.000012 * 2500 = 0.17 + 0.042 + 0.03
        let net = build(2, &[(0, 1, 1000.0, 50.0, R)]);
        assert_relative_eq!(
            edge_weight(&net, EdgeId(0), CostKind::Fuel).unwrap(),
            0.242,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unknown_edge_is_an_error() {
        let net = build(2, &[(0, 1, 1000.0, 50.0, R)]);
        assert!(matches!(
            edge_weight(&net, EdgeId(5), CostKind::Distance),
            Err(Error::UnknownEdge(5))
        ));
    }

    #[test]
    fn network_rejects_bad_edges() {
        let v = |i| Vertex {
            original_id: i,
            lon: 0.0,
            lat: 0.0,
        };
        let e = |len, speed| Edge {
            original_id: 0,
            from: VertexId(0),
            to: VertexId(1),
            length_m: len,
            speed_kmh: speed,
            road_type: R,
        };
        assert!(RoadNetwork::new(vec![v(0), v(1)], vec![e(0.0, 30.0)], FuelModel::default()).is_err());
        assert!(RoadNetwork::new(vec![v(0), v(1)], vec![e(10.0, -1.0)], FuelModel::default()).is_err());
        assert!(RoadNetwork::new(vec![v(0), v(0)], vec![], FuelModel::default()).is_err());
        let dangling = Edge {
            to: VertexId(9),
            ..e(10.0, 30.0)
        };
        assert!(RoadNetwork::new(vec![v(0), v(1)], vec![dangling], FuelModel::default()).is_err());
    }

    #[test]
    fn path_costs_are_additive() {
        let net = build(
            4,
            &[
                (0, 1, 100.0, 36.0, R),
                (1, 2, 200.0, 144.0, R),
                (2, 3, 50.0, 36.0, R),
            ],
        );
        let single = validate_path(&net, &vids(&[2])).unwrap();
        assert_eq!(path_cost(&net, &single, CostKind::Fuel).unwrap(), 0.0);

        let two = validate_path(&net, &vids(&[0, 1, 2])).unwrap();
        assert_eq!(path_cost(&net, &two, CostKind::Distance).unwrap(), 300.0);

        let three = validate_path(&net, &vids(&[0, 1, 2, 3])).unwrap();
        assert_relative_eq!(
            path_cost(&net, &three, CostKind::TravelTime).unwrap(),
            20.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn validate_path_cases() {
        let net = build(3, &[(0, 1, 100.0, 36.0, R), (1, 2, 100.0, 36.0, R)]);
        let p = validate_path(&net, &vids(&[1])).unwrap();
        assert_eq!(p.edge_count(), 0);

        let p = validate_path(&net, &vids(&[0, 1])).unwrap();
        assert_eq!(p.edges(), &[EdgeId(0)]);

        let err = validate_path(&net, &vids(&[0, 2])).unwrap_err();
        assert_eq!(err.to_string(), "no edge 0→2");

        assert!(matches!(validate_path(&net, &[]), Err(Error::EmptyPath)));
        assert!(matches!(
            validate_path(&net, &vids(&[0, 7])),
            Err(Error::UnknownVertex(7))
        ));
    }

    #[test]
    fn erase_loops_drops_cycles() {
        let net = build(
            4,
            &[
                (0, 1, 1.0, 36.0, R),
                (1, 2, 1.0, 36.0, R),
                (2, 1, 1.0, 36.0, R),
                (1, 3, 1.0, 36.0, R),
            ],
        );
        let p = validate_path(&net, &vids(&[0, 1, 2, 1, 3])).unwrap();
        let q = p.erase_loops();
        assert_eq!(q.vertices(), vids(&[0, 1, 3]).as_slice());
        q.check(&net).unwrap();
    }

    #[test]
    fn network_serde_round_trip() {
        let net = build(3, &[(0, 1, 100.0, 36.0, R), (1, 2, 100.0, 50.0, RoadType::Primary)]);
        let json = serde_json::to_string(&net).unwrap();
        let back: RoadNetwork = serde_json::from_str(&json).unwrap();
        assert_eq!(back.edges(), net.edges());
        assert_eq!(back.out_edges(VertexId(1)), net.out_edges(VertexId(1)));
        assert_eq!(back.vertex_by_original(2), Some(VertexId(2)));
    }

    fn chain(len: usize) -> RoadNetwork {
        let edges: Vec<_> = (0..len as u32)
            .map(|i| (i, i + 1, 10.0 + i as f64 * 7.0, 20.0 + (i % 5) as f64 * 15.0, R))
            .collect();
        build(len + 1, &edges)
    }

    proptest! {
        #[test]
        fn extension_strictly_increases_tt_and_fc(len in 1usize..20, cut in 0usize..19) {
            let net = chain(len);
            let cut = cut % len;
            let ids: Vec<VertexId> = (0..=len as u32).map(VertexId).collect();
            let short = validate_path(&net, &ids[..=cut]).unwrap();
            let long = validate_path(&net, &ids[..=cut + 1]).unwrap();
            for kind in [CostKind::TravelTime, CostKind::Fuel] {
                prop_assert!(path_cost(&net, &long, kind).unwrap() > path_cost(&net, &short, kind).unwrap());
            }
            let expected: f64 = long.edges().iter().map(|&e| net.edge(e).length_m).sum();
            prop_assert_eq!(path_cost(&net, &long, CostKind::Distance).unwrap(), expected);
        }

        #[test]
        fn validate_is_identity_on_valid_paths(len in 1usize..20, a in 0usize..20, b in 0usize..20) {
            let net = chain(len);
            let (a, b) = (a.min(b) % (len + 1), a.max(b) % (len + 1));
            let (a, b) = (a.min(b), a.max(b));
            let ids: Vec<VertexId> = (a as u32..=b as u32).map(VertexId).collect();
            let p = validate_path(&net, &ids).unwrap();
            let again = validate_path(&net, p.vertices()).unwrap();
            prop_assert_eq!(p, again);
        }
    }
}
