//! Pipeline stages and the self-describing model artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apply_pref::{populate_b_edge_paths, PopulateReport, DEFAULT_PAIR_CAP};
use crate::clustering::{bottom_up_clustering, build_trajectory_graph, RegionId};
use crate::error::{Error, Result};
use crate::netmodel::{CostKind, RoadNetwork, Trajectory};
use crate::preference::{learn_preference, CachedPlanner, FeatureSpace, PreferenceVector, RoadCondition};
use crate::region_graph::{EdgeKind, PreferenceSource, RegionGraphModel};
use crate::transfer::{transfer_preferences, TransferConfig, TransferReport};

pub const MODEL_FORMAT: &str = "l2r-model/1";

/// Hash of the training inputs, so evaluation can prove its test set was
/// never seen during construction.
pub fn training_fingerprint(net: &RoadNetwork, trajectories: &[Trajectory]) -> String {
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by_key(|t| (t.traj_id, t.departure));
    let mut h = Sha256::new();
    for t in order {
        h.update(format!("{},{},{}:", t.traj_id, t.driver_id, t.departure).as_bytes());
        for &v in t.path.vertices() {
            h.update(net.original_id(v).to_le_bytes());
        }
        h.update(b";");
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub trajectory_ids: Vec<i64>,
    pub fingerprint: String,
    /// Time window the trajectories were filtered to, as `HH:MM-HH:MM`.
    pub window: Option<String>,
    /// Departures at or after this epoch were excluded from training.
    pub boundary: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub trajectories: usize,
    pub trajectory_graph_vertices: usize,
    pub trajectory_graph_edges: usize,
    pub merges: usize,
    pub cuts: usize,
    pub extractions: usize,
    pub regions: usize,
    pub singleton_regions: usize,
    pub t_edges: usize,
    pub b_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub learned: usize,
    pub pair_cap: usize,
    pub report: TransferReport,
    pub populate: PopulateReport,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Built,
    Transferred,
}

/// Everything needed to answer queries, in one JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub stage: Stage,
    pub network: RoadNetwork,
    pub graph: RegionGraphModel,
    pub feature_space: FeatureSpace,
    pub training: TrainingInfo,
    pub build: BuildSummary,
    pub transfer: Option<TransferSummary>,
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    pub window: Option<String>,
    pub boundary: Option<i64>,
    pub feature_space: FeatureSpace,
}

/// Clusters the trajectories into regions and connects them with T- and
/// B-edges.
pub fn build_model(net: RoadNetwork, train: &[Trajectory], opts: BuildOptions) -> Result<Model> {
    let tg = build_trajectory_graph(&net, train);
    let clustering = bottom_up_clustering(&tg);
    let regions = clustering.regions(&net);
    let singleton_regions = regions.iter().filter(|r| r.members.len() == 1).count();
    let mut graph = RegionGraphModel::from_trajectories(&net, regions, train)?;
    graph.build_b_edges(&net);

    let build = BuildSummary {
        trajectories: train.len(),
        trajectory_graph_vertices: tg.vertices().len(),
        trajectory_graph_edges: tg.edges().len(),
        merges: clustering.merges.len(),
        cuts: clustering.cuts,
        extractions: clustering.extractions,
        regions: graph.regions().len(),
        singleton_regions,
        t_edges: graph.t_edge_count(),
        b_edges: graph.b_edge_count(),
    };
    info!(
        "built {} regions, {} T-edges, {} B-edges from {} trajectories",
        build.regions, build.t_edges, build.b_edges, build.trajectories
    );

    let mut ids: Vec<i64> = train.iter().map(|t| t.traj_id).collect();
    ids.sort_unstable();
    Ok(Model {
        format: MODEL_FORMAT.to_string(),
        stage: Stage::Built,
        training: TrainingInfo {
            trajectory_ids: ids,
            fingerprint: training_fingerprint(&net, train),
            window: opts.window,
            boundary: opts.boundary,
        },
        network: net,
        graph,
        feature_space: opts.feature_space,
        build,
        transfer: None,
    })
}

/// Learns a preference for every T-edge. Edges leaving the same region share
/// a planner cache, since their paths start at the same transfer centers.
pub fn learn_t_edges(net: &RoadNetwork, graph: &mut RegionGraphModel, space: &FeatureSpace) -> Result<usize> {
    let mut groups: BTreeMap<RegionId, Vec<usize>> = BTreeMap::new();
    for (i, e) in graph.edges().iter().enumerate() {
        if e.kind == EdgeKind::T && !e.paths.is_empty() {
            groups.entry(e.from).or_default().push(i);
        }
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let learned: Vec<(usize, PreferenceVector)> = {
        let graph = &*graph;
        groups
            .par_iter()
            .map(|group| {
                let planner = CachedPlanner::new(net);
                group
                    .iter()
                    .map(|&i| {
                        learn_preference(&planner, &graph.edge(i).paths, space).map(|l| (i, l.vector))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    };
    let edges = graph.edges_mut();
    for &(i, v) in &learned {
        edges[i].preference = Some(v);
        edges[i].preference_source = Some(PreferenceSource::Learned);
    }
    Ok(learned.len())
}

impl Model {
    /// Learns T-edge preferences, transfers them to B-edges and fills B-edges
    /// with paths. Idempotent on a built model.
    pub fn transfer(&mut self, config: &TransferConfig, pair_cap: usize) -> Result<&TransferSummary> {
        config.validate()?;
        for e in self.graph.edges_mut() {
            e.preference = None;
            e.preference_source = None;
            if e.kind == EdgeKind::B {
                e.paths.clear();
                e.dead = false;
            }
        }
        let learned = learn_t_edges(&self.network, &mut self.graph, &self.feature_space)?;
        info!("learned {} T-edge preferences", learned);
        let report = transfer_preferences(&self.network, &mut self.graph, &self.feature_space, config)?;
        info!(
            "transferred to {} B-edges, null rate {:.3}",
            self.graph.b_edge_count(),
            report.null_rate
        );
        let populate = populate_b_edge_paths(&self.network, &mut self.graph, pair_cap);
        self.stage = Stage::Transferred;
        self.transfer = Some(TransferSummary { learned, pair_cap, report, populate });
        Ok(self.transfer.as_ref().unwrap())
    }

    pub fn transfer_default(&mut self) -> Result<&TransferSummary> {
        self.transfer(&TransferConfig::default(), DEFAULT_PAIR_CAP)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Model> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Model = serde_json::from_reader(BufReader::new(f))?;
        if model.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "{}: unsupported format {:?}, expected {:?}",
                path.display(),
                model.format,
                MODEL_FORMAT
            )));
        }
        Ok(model)
    }

    /// Region-edge preference table.
    pub fn preferences(&self) -> Vec<PreferenceEntry> {
        self.graph
            .edges()
            .iter()
            .enumerate()
            .map(|(i, e)| PreferenceEntry {
                edge_id: i,
                from: e.from,
                to: e.to,
                kind: e.kind,
                master: e.preference.map(|p| p.master),
                slave: e.preference.and_then(|p| p.slave),
                source: e.preference_source,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceEntry {
    pub edge_id: usize,
    pub from: RegionId,
    pub to: RegionId,
    pub kind: EdgeKind,
    pub master: Option<CostKind>,
    pub slave: Option<RoadCondition>,
    pub source: Option<PreferenceSource>,
}
