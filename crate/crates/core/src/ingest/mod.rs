//! Text-file loaders and writers for networks and map-matched trajectories,
//! plus the synthetic world generator.

mod synth;

pub use synth::{
    generate_synthetic, planted_path, BlockPair, PlantedPreference, RoadTypePlan, SyntheticConfig, SyntheticWorld,
};

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{
    Edge, FuelModel, RoadNetwork, RoadType, Trajectory, Vertex, VertexId,
};

fn parse_err(path: &FsPath, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open(path: &FsPath) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct NodeRow {
    node_id: i64,
    lon: f64,
    lat: f64,
}

#[derive(Deserialize)]
struct EdgeRow {
    edge_id: i64,
    from: i64,
    to: i64,
    length_m: f64,
    speed_kmh: f64,
    road_type: String,
    oneway: String,
}

fn reader(path: &FsPath) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_line(err: &csv::Error, fallback: u64) -> u64 {
    err.position().map_or(fallback, |p| p.line())
}

/// Loads `nodes.csv` and `edges.csv`. Edges with `oneway=false` become two
/// directed edges sharing their attributes and original id.
pub fn load_road_network(nodes: &FsPath, edges: &FsPath, fuel: FuelModel) -> Result<RoadNetwork> {
    let mut vertices = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut rdr = reader(nodes)?;
    for (i, row) in rdr.deserialize::<NodeRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| parse_err(nodes, csv_line(&e, line), e.to_string()))?;
        if !(row.lon.is_finite() && row.lat.is_finite()) {
            return Err(parse_err(nodes, line, "non-finite coordinate"));
        }
        if index.insert(row.node_id, VertexId::from(vertices.len())).is_some() {
            return Err(parse_err(nodes, line, format!("duplicate node {}", row.node_id)));
        }
        vertices.push(Vertex {
            original_id: row.node_id,
            lon: row.lon,
            lat: row.lat,
        });
    }

    let mut out = Vec::new();
    let mut rdr = reader(edges)?;
    for (i, row) in rdr.deserialize::<EdgeRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| parse_err(edges, csv_line(&e, line), e.to_string()))?;
        let endpoint = |id: i64| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| parse_err(edges, line, format!("unknown vertex {id} at line {line}")))
        };
        let (from, to) = (endpoint(row.from)?, endpoint(row.to)?);
        if !(row.length_m > 0.0 && row.length_m.is_finite()) {
            return Err(parse_err(edges, line, "length_m must be positive"));
        }
        if !(row.speed_kmh > 0.0 && row.speed_kmh.is_finite()) {
            return Err(parse_err(edges, line, "speed_kmh must be positive"));
        }
        let road_type = RoadType::from_str(&row.road_type)
            .map_err(|_| parse_err(edges, line, format!("unknown road type {:?}", row.road_type)))?;
        let oneway = match row.oneway.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(parse_err(edges, line, format!("oneway must be true or false, got {other:?}"))),
        };
        let mut edge = Edge {
            original_id: row.edge_id,
            from,
            to,
            length_m: row.length_m,
            speed_kmh: row.speed_kmh,
            road_type,
        };
        out.push(edge.clone());
        if !oneway {
            std::mem::swap(&mut edge.from, &mut edge.to);
            out.push(edge);
        }
    }
    RoadNetwork::new(vertices, out, fuel)
}

fn csv_io(path: &FsPath, e: csv::Error) -> Error {
    Error::io(path, e.into())
}

/// Writes the network as `nodes.csv`/`edges.csv`, one row per directed edge.
pub fn write_road_network(net: &RoadNetwork, nodes: &FsPath, edges: &FsPath) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(nodes)?);
    w.write_record(["node_id", "lon", "lat"]).map_err(|e| csv_io(nodes, e))?;
    for v in net.vertices() {
        w.write_record([v.original_id.to_string(), v.lon.to_string(), v.lat.to_string()])
            .map_err(|e| csv_io(nodes, e))?;
    }
    w.flush().map_err(|e| Error::io(nodes, e))?;

    let mut w = csv::Writer::from_writer(create(edges)?);
    w.write_record(["edge_id", "from", "to", "length_m", "speed_kmh", "road_type", "oneway"])
        .map_err(|e| csv_io(edges, e))?;
    for e in net.edges() {
        w.write_record([
            e.original_id.to_string(),
            net.original_id(e.from).to_string(),
            net.original_id(e.to).to_string(),
            e.length_m.to_string(),
            e.speed_kmh.to_string(),
            e.road_type.name().to_string(),
            "true".to_string(),
        ])
        .map_err(|e| csv_io(edges, e))?;
    }
    w.flush().map_err(|e| Error::io(edges, e))
}

/// Daily departure window `[start, end)` in minutes after midnight UTC.
/// A window with `start > end` wraps past midnight.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_min: u32,
    pub end_min: u32,
}

impl TimeWindow {
    pub fn contains(&self, departure: i64) -> bool {
        let m = (departure.rem_euclid(86_400) / 60) as u32;
        if self.start_min <= self.end_min {
            (self.start_min..self.end_min).contains(&m)
        } else {
            m >= self.start_min || m < self.end_min
        }
    }
}

impl FromStr for TimeWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("time window {s:?} is not HH:MM-HH:MM"));
        let minutes = |t: &str| -> Result<u32> {
            let (h, m) = t.split_once(':').ok_or_else(bad)?;
            let (h, m): (u32, u32) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
            if h > 24 || m > 59 || (h == 24 && m > 0) {
                return Err(bad());
            }
            Ok(h * 60 + m)
        };
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Ok(TimeWindow {
            start_min: minutes(a.trim())?,
            end_min: minutes(b.trim())?,
        })
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02}:{:02}-{:02}:{:02}",
            self.start_min / 60,
            self.start_min % 60,
            self.end_min / 60,
            self.end_min % 60
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub traj_id: Option<i64>,
    pub reason: String,
}

/// Outcome counts of a trajectory load. Every input record is either
/// accepted, rejected or outside the time window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: usize,
    pub accepted: usize,
    pub outside_window: usize,
    pub rejects: Vec<Reject>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    traj_id: i64,
    driver_id: i64,
    departure: i64,
    path: Vec<i64>,
}

fn resolve(net: &RoadNetwork, rec: TrajectoryRecord) -> std::result::Result<Trajectory, String> {
    if rec.departure < 0 {
        return Err("negative departure".into());
    }
    let ids = rec
        .path
        .iter()
        .map(|&id| net.vertex_by_original(id).ok_or_else(|| format!("unknown vertex {id}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let path = crate::netmodel::validate_path(net, &ids).map_err(|e| e.to_string())?;
    Ok(Trajectory {
        traj_id: rec.traj_id,
        driver_id: rec.driver_id,
        departure: rec.departure,
        path,
    })
}

/// Loads `trajectories.jsonl`. Records that fail to parse or validate are
/// skipped and listed in the report.
pub fn load_trajectories(
    path: &FsPath,
    net: &RoadNetwork,
    window: Option<TimeWindow>,
) -> Result<(Vec<Trajectory>, LoadReport)> {
    let mut out = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        report.records += 1;
        let rec: TrajectoryRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => {
                report.rejects.push(Reject {
                    line: line_no,
                    traj_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let id = rec.traj_id;
        match resolve(net, rec) {
            Ok(t) if window.is_some_and(|w| !w.contains(t.departure)) => report.outside_window += 1,
            Ok(t) => {
                report.accepted += 1;
                out.push(t);
            }
            Err(reason) => report.rejects.push(Reject {
                line: line_no,
                traj_id: Some(id),
                reason,
            }),
        }
    }
    Ok((out, report))
}

pub fn write_trajectories(net: &RoadNetwork, trajectories: &[Trajectory], path: &FsPath) -> Result<()> {
    let mut w = create(path)?;
    for t in trajectories {
        let rec = TrajectoryRecord {
            traj_id: t.traj_id,
            driver_id: t.driver_id,
            departure: t.departure,
            path: t.path.vertices().iter().map(|&v| net.original_id(v)).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &FsPath, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn two_nodes(dir: &FsPath) -> std::path::PathBuf {
        write(dir, "nodes.csv", "node_id,lon,lat\n10,0.0,0.0\n20,0.001,0.0\n")
    }

    #[test]
    fn loads_minimal_network() {
        let dir = tempfile::tempdir().unwrap();
        let n = two_nodes(dir.path());
        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,100,36,residential,true\n");
        let net = load_road_network(&n, &e, FuelModel::default()).unwrap();
        assert_eq!((net.vertex_count(), net.edge_count()), (2, 1));

        let e = write(dir.path(), "edges2.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,100,36,residential,false\n");
        let net = load_road_network(&n, &e, FuelModel::default()).unwrap();
        assert_eq!(net.edge_count(), 2);
        assert_eq!(net.edge(crate::netmodel::EdgeId(1)).from, net.vertex_by_original(20).unwrap());
    }

    #[test]
    fn reports_bad_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let n = two_nodes(dir.path());
        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,100,36,residential,true\n2,10,99,100,36,residential,true\n");
        let err = load_road_network(&n, &e, FuelModel::default()).unwrap_err().to_string();
        assert!(err.contains("unknown vertex 99 at line 3"), "{err}");

        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,0,36,residential,true\n");
        assert!(load_road_network(&n, &e, FuelModel::default()).is_err());
        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,5,36,dirt,true\n");
        assert!(load_road_network(&n, &e, FuelModel::default()).is_err());
        let missing = dir.path().join("nope.csv");
        let err = load_road_network(&missing, &e, FuelModel::default()).unwrap_err().to_string();
        assert!(err.contains("nope.csv"));
    }

    #[test]
    fn trajectories_with_rejects_and_window() {
        let dir = tempfile::tempdir().unwrap();
        let n = two_nodes(dir.path());
        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,100,36,residential,false\n");
        let net = load_road_network(&n, &e, FuelModel::default()).unwrap();
        let t = write(
            dir.path(),
            "t.jsonl",
            "{\"traj_id\":1,\"driver_id\":1,\"departure\":28800,\"path\":[10,20]}\n\
             {\"traj_id\":2,\"driver_id\":1,\"departure\":43200,\"path\":[20,10]}\n\
             {\"traj_id\":3,\"driver_id\":1,\"departure\":0,\"path\":[10,10]}\n\
             not json\n",
        );
        let (ts, report) = load_trajectories(&t, &net, None).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(report.rejects.len(), 2);
        assert_eq!(report.rejects[0].traj_id, Some(3));
        assert_eq!(report.rejects[1].line, 4);
        assert_eq!(report.accepted + report.rejects.len(), report.records);

        let window: TimeWindow = "07:00-09:00".parse().unwrap();
        let (ts, report) = load_trajectories(&t, &net, Some(window)).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].traj_id, 1);
        assert_eq!(report.outside_window, 1);
    }

    #[test]
    fn time_window_parsing() {
        let w: TimeWindow = "22:30-06:00".parse().unwrap();
        assert!(w.contains(23 * 3600));
        assert!(w.contains(3600));
        assert!(!w.contains(12 * 3600));
        assert_eq!(w.to_string(), "22:30-06:00");
        assert!("7-9".parse::<TimeWindow>().is_err());
        assert!("25:00-26:00".parse::<TimeWindow>().is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let n = two_nodes(dir.path());
        let e = write(dir.path(), "edges.csv", "edge_id,from,to,length_m,speed_kmh,road_type,oneway\n1,10,20,123.25,36,trunk,false\n");
        let net = load_road_network(&n, &e, FuelModel::default()).unwrap();
        let (n2, e2) = (dir.path().join("n2.csv"), dir.path().join("e2.csv"));
        write_road_network(&net, &n2, &e2).unwrap();
        let again = load_road_network(&n2, &e2, FuelModel::default()).unwrap();
        assert_eq!(serde_json::to_string(&net).unwrap(), serde_json::to_string(&again).unwrap());

        let ts = vec![Trajectory {
            traj_id: 5,
            driver_id: 2,
            departure: 100,
            path: crate::netmodel::validate_path(&net, &[VertexId(0), VertexId(1), VertexId(0)]).unwrap(),
        }];
        let p = dir.path().join("t.jsonl");
        write_trajectories(&net, &ts, &p).unwrap();
        let (back, _) = load_trajectories(&p, &again, None).unwrap();
        assert_eq!(back, ts);
    }
}
