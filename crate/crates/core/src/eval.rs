//! Held-out evaluation of routing against ground-truth trajectories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::netmodel::{CostKind, Path, RoadNetwork, Trajectory};
use crate::preference::{psim_intersection, psim_union};
use crate::region_graph::RegionGraphModel;
use crate::router::Router;
use crate::search;

/// Departures before `boundary` train, the rest test. Input order is kept.
pub fn split_train_test(trajectories: &[Trajectory], boundary: i64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    trajectories
        .iter()
        .cloned()
        .partition(|t| t.departure < boundary)
}

/// Departure time below which `share` of the trajectories fall.
pub fn boundary_at_share(trajectories: &[Trajectory], share: f64) -> Option<i64> {
    if trajectories.is_empty() {
        return None;
    }
    let mut deps: Vec<i64> = trajectories.iter().map(|t| t.departure).collect();
    deps.sort_unstable();
    let k = ((deps.len() as f64 * share).round() as usize).min(deps.len() - 1);
    Some(deps[k])
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    L2R,
    Shortest,
    Fastest,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::L2R, Method::Shortest, Method::Fastest];

    pub fn name(self) -> &'static str {
        match self {
            Method::L2R => "L2R",
            Method::Shortest => "Shortest",
            Method::Fastest => "Fastest",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PsimIntersection,
    PsimUnion,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::PsimIntersection, Metric::PsimUnion];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PsimIntersection => "psim_intersection",
            Metric::PsimUnion => "psim_union",
        }
    }
}

/// Region membership of a query's endpoints.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    InRegion,
    InOutRegion,
    OutRegion,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::InRegion, Category::InOutRegion, Category::OutRegion];

    pub fn of(model: &RegionGraphModel, path: &Path) -> Category {
        match (
            model.region_of(path.source()).is_some(),
            model.region_of(path.target()).is_some(),
        ) {
            (true, true) => Category::InRegion,
            (false, false) => Category::OutRegion,
            _ => Category::InOutRegion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::InRegion => "InRegion",
            Category::InOutRegion => "InOutRegion",
            Category::OutRegion => "OutRegion",
        }
    }
}

/// Half-open distance band `(lo, hi]` in kilometers.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_km: f64,
    pub hi_km: f64,
}

impl Band {
    pub fn contains(&self, km: f64) -> bool {
        km > self.lo_km && km <= self.hi_km
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{}]", self.lo_km, self.hi_km)
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub bands: Vec<Band>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let edges = [0.0, 2.0, 5.0, 10.0, 35.0];
        EvalConfig {
            bands: edges
                .windows(2)
                .map(|w| Band { lo_km: w[0], hi_km: w[1] })
                .collect(),
        }
    }
}

/// Scores of one method on one query; `None` when it found no path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub psim_intersection: f64,
    pub psim_union: f64,
    pub query_ms: f64,
}

impl MethodOutcome {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::PsimIntersection => self.psim_intersection,
            Metric::PsimUnion => self.psim_union,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub traj_id: i64,
    pub distance_km: f64,
    pub category: Category,
    pub results: BTreeMap<Method, Option<MethodOutcome>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metric: String,
    pub bucket_kind: String,
    pub bucket: String,
    /// Empty bucket means are absent.
    pub mean: Option<f64>,
    pub n: usize,
    pub mean_query_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub training_fingerprint: String,
    pub queries: usize,
    /// Queries with a non-trivial ground-truth path.
    pub scored: usize,
    /// Queries whose ground truth has no edges and cannot be scored.
    pub trivial: usize,
    pub unroutable: BTreeMap<Method, usize>,
    pub category_counts: BTreeMap<Category, usize>,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub outcomes: Vec<QueryOutcome>,
}

impl Report {
    fn row(&self, method: Method, metric: Metric, kind: &str, bucket: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.method == method.name() && r.metric == metric.name() && r.bucket_kind == kind && r.bucket == bucket
        })
    }

    /// Mean over all routed queries.
    pub fn mean(&self, method: Method, metric: Metric) -> Option<f64> {
        self.row(method, metric, "all", "all").and_then(|r| r.mean)
    }

    pub fn category_mean(&self, method: Method, metric: Metric, c: Category) -> Option<f64> {
        self.row(method, metric, "category", c.name()).and_then(|r| r.mean)
    }
}

fn score(net: &RoadNetwork, truth: &Path, candidate: &Path, ms: f64) -> Result<MethodOutcome> {
    let union = if candidate.is_trivial() {
        0.0
    } else {
        psim_union(net, truth, candidate)?
    };
    Ok(MethodOutcome {
        psim_intersection: psim_intersection(net, truth, candidate)?,
        psim_union: union,
        query_ms: ms,
    })
}

fn run_query(router: &Router<'_>, t: &Trajectory) -> Result<QueryOutcome> {
    let net = router.network();
    let truth = &t.path;
    let (s, d) = (truth.source(), truth.target());
    let mut results = BTreeMap::new();
    for m in Method::ALL {
        let start = Instant::now();
        let found = match m {
            Method::L2R => router.route(s, d, Some(t.departure)).map(|r| r.path),
            Method::Shortest => search::shortest_path(net, s, d, CostKind::Distance),
            Method::Fastest => search::shortest_path(net, s, d, CostKind::TravelTime),
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let outcome = match found {
            Ok(p) => Some(score(net, truth, &p, ms)?),
            Err(Error::NoPath { .. }) => None,
            Err(e) => return Err(e),
        };
        results.insert(m, outcome);
    }
    Ok(QueryOutcome {
        traj_id: t.traj_id,
        distance_km: truth.length_m(net) / 1000.0,
        category: Category::of(router.model(), truth),
        results,
    })
}

fn aggregate<'a>(
    outcomes: impl Iterator<Item = &'a QueryOutcome> + Clone,
    method: Method,
    metric: Metric,
    kind: &str,
    bucket: String,
) -> ReportRow {
    let (mut sum, mut ms, mut n) = (0.0, 0.0, 0usize);
    for o in outcomes {
        if let Some(Some(r)) = o.results.get(&method) {
            sum += r.metric(metric);
            ms += r.query_ms;
            n += 1;
        }
    }
    ReportRow {
        method: method.name().into(),
        metric: metric.name().into(),
        bucket_kind: kind.into(),
        bucket,
        mean: (n > 0).then(|| sum / n as f64),
        n,
        mean_query_ms: (n > 0).then(|| ms / n as f64),
    }
}

/// Routes every test trajectory's endpoints with each method and compares
/// against the trajectory's own path. Refuses test trajectories that the
/// model was trained on.
pub fn evaluate(model: &Model, test: &[Trajectory], config: &EvalConfig) -> Result<Report> {
    let trained = &model.training.trajectory_ids;
    if let Some(t) = test.iter().find(|t| trained.binary_search(&t.traj_id).is_ok()) {
        return Err(Error::Model(format!(
            "test trajectory {} was part of the training input (fingerprint {})",
            t.traj_id, model.training.fingerprint
        )));
    }
    let router = Router::new(&model.network, &model.graph);
    let scorable: Vec<&Trajectory> = test.iter().filter(|t| !t.path.is_trivial()).collect();
    let outcomes: Vec<QueryOutcome> = scorable
        .par_iter()
        .map(|t| run_query(&router, t))
        .collect::<Result<_>>()?;
    Ok(summarize(model.training.fingerprint.clone(), test.len(), outcomes, config))
}

pub fn summarize(fingerprint: String, queries: usize, outcomes: Vec<QueryOutcome>, config: &EvalConfig) -> Report {
    let mut rows = Vec::new();
    for method in Method::ALL {
        for metric in Metric::ALL {
            rows.push(aggregate(outcomes.iter(), method, metric, "all", "all".into()));
            for band in &config.bands {
                let inside = outcomes.iter().filter(|o| band.contains(o.distance_km));
                rows.push(aggregate(inside, method, metric, "distance", band.to_string()));
            }
            for c in Category::ALL {
                let inside = outcomes.iter().filter(|o| o.category == c);
                rows.push(aggregate(inside, method, metric, "category", c.name().into()));
            }
        }
    }
    let unroutable = Method::ALL
        .iter()
        .map(|&m| {
            let n = outcomes
                .iter()
                .filter(|o| matches!(o.results.get(&m), Some(None)))
                .count();
            (m, n)
        })
        .collect();
    let category_counts = Category::ALL
        .iter()
        .map(|&c| (c, outcomes.iter().filter(|o| o.category == c).count()))
        .collect();
    Report {
        training_fingerprint: fingerprint,
        queries,
        scored: outcomes.len(),
        trivial: queries - outcomes.len(),
        unroutable,
        category_counts,
        rows,
        outcomes,
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &Report, dir: &FsPath) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let f = File::create(&json).map_err(|e| Error::io(&json, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.flush().map_err(|e| Error::io(&json, e))?;

    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    for row in &report.rows {
        w.serialize(row).map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

fn csv_err(path: &FsPath, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
