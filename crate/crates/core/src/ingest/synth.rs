//! Synthetic grid worlds with planted routing preferences.
//!
//! The street grid takes its road types from repeating row and column
//! patterns. Motorways run as a separate elevated layer above selected rows
//! and columns, reached through on-ramps and left through off-ramps at
//! different grid vertices. Each trip is routed with the preference planted
//! for its (origin block, destination block) pair.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apply_pref::preference_dijkstra;
use crate::error::{Error, Result};
use crate::netmodel::{
    planar_distance_m, Edge, FuelModel, Path, RoadNetwork, RoadType, Trajectory, Vertex, VertexId,
};
use crate::preference::PreferenceVector;

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const MAX_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadTypePlan {
    /// Road type of the segments along grid row `r` is `row_types[r % len]`.
    pub row_types: Vec<RoadType>,
    pub col_types: Vec<RoadType>,
    /// Grid rows and columns with a motorway running above them.
    pub motorway_rows: Vec<usize>,
    pub motorway_cols: Vec<usize>,
    /// Spacing of on-ramps along a motorway; off-ramps sit halfway between.
    pub ramp_every: usize,
    /// Speed per road type, indexed by code - 1.
    pub speeds_kmh: [f64; 6],
    /// Rows and columns are cut into runs of this many cells; 0 keeps every
    /// row and column uniform.
    pub segment_cells: usize,
    /// Each run whose base type heads a family takes a uniform draw from
    /// that family instead.
    pub families: Vec<Vec<RoadType>>,
}

impl Default for RoadTypePlan {
    fn default() -> Self {
        use RoadType::*;
        RoadTypePlan {
            row_types: vec![Primary, Residential, Residential, Residential],
            col_types: vec![Primary, Residential, Residential, Residential],
            motorway_rows: vec![13],
            motorway_cols: vec![33],
            ramp_every: 6,
            speeds_kmh: [100.0, 80.0, 60.0, 50.0, 40.0, 30.0],
            segment_cells: 1,
            families: vec![vec![Residential, Tertiary, Secondary], vec![Primary, Trunk]],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockPair {
    pub origin: usize,
    pub destination: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPreference {
    pub pair: BlockPair,
    pub preference: PreferenceVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub spacing_m: f64,
    /// Vertex position jitter as a fraction of the spacing.
    pub jitter: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub road_type_plan: RoadTypePlan,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Weighted choices for block pairs without an explicit plant.
    pub preference_mix: Vec<(PreferenceVector, f64)>,
    /// Explicit plants; they override the mix.
    pub planted_preferences: Vec<PlantedPreference>,
    pub trajectory_count: usize,
    pub rng_seed: u64,
    pub detour_noise: f64,
    pub hotspots: usize,
    pub hotspot_share: f64,
    pub hotspot_radius: usize,
    /// Minimum Manhattan distance between trip endpoints, in grid cells.
    pub min_trip_cells: usize,
    pub drivers: usize,
    pub start_epoch: i64,
    pub span_days: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            grid_rows: 40,
            grid_cols: 50,
            spacing_m: 250.0,
            jitter: 0.15,
            origin_lon: 10.0,
            origin_lat: 56.0,
            road_type_plan: RoadTypePlan::default(),
            block_rows: 4,
            block_cols: 4,
            preference_mix: vec![
                (PreferenceVector::with_road(crate::netmodel::CostKind::TravelTime, RoadType::Motorway), 0.3),
                (PreferenceVector::plain(crate::netmodel::CostKind::Distance), 0.3),
                (PreferenceVector::plain(crate::netmodel::CostKind::TravelTime), 0.2),
                (PreferenceVector::plain(crate::netmodel::CostKind::Fuel), 0.2),
            ],
            planted_preferences: Vec::new(),
            trajectory_count: 8000,
            rng_seed: 1,
            detour_noise: 0.0,
            hotspots: 12,
            hotspot_share: 0.85,
            hotspot_radius: 1,
            min_trip_cells: 6,
            drivers: 200,
            start_epoch: 1_600_000_000,
            span_days: 60,
        }
    }
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse {s:?}")))
        .collect()
}

impl SyntheticConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: String| Error::InvalidArgument(format!("{key}: {msg}"));
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        let v = value.trim();
        let plan = &mut self.road_type_plan;
        match key.trim() {
            "grid_rows" => self.grid_rows = num(v).map_err(bad)?,
            "grid_cols" => self.grid_cols = num(v).map_err(bad)?,
            "spacing_m" => self.spacing_m = num(v).map_err(bad)?,
            "jitter" => self.jitter = num(v).map_err(bad)?,
            "origin_lon" => self.origin_lon = num(v).map_err(bad)?,
            "origin_lat" => self.origin_lat = num(v).map_err(bad)?,
            "row_types" => plan.row_types = list(v).map_err(bad)?,
            "col_types" => plan.col_types = list(v).map_err(bad)?,
            "motorway_rows" => plan.motorway_rows = list(v).map_err(bad)?,
            "motorway_cols" => plan.motorway_cols = list(v).map_err(bad)?,
            "ramp_every" => plan.ramp_every = num(v).map_err(bad)?,
            "segment_cells" => plan.segment_cells = num(v).map_err(bad)?,
            "families" => {
                // e.g. "residential, tertiary; primary, trunk"
                plan.families = v
                    .split(';')
                    .map(list)
                    .filter(|f| !matches!(f, Ok(f) if f.is_empty()))
                    .collect::<std::result::Result<_, String>>()
                    .map_err(bad)?;
            }
            "block_rows" => self.block_rows = num(v).map_err(bad)?,
            "block_cols" => self.block_cols = num(v).map_err(bad)?,
            "trajectory_count" => self.trajectory_count = num(v).map_err(bad)?,
            "rng_seed" | "seed" => self.rng_seed = num(v).map_err(bad)?,
            "detour_noise" => self.detour_noise = num(v).map_err(bad)?,
            "hotspots" => self.hotspots = num(v).map_err(bad)?,
            "hotspot_share" => self.hotspot_share = num(v).map_err(bad)?,
            "hotspot_radius" => self.hotspot_radius = num(v).map_err(bad)?,
            "min_trip_cells" => self.min_trip_cells = num(v).map_err(bad)?,
            "drivers" => self.drivers = num(v).map_err(bad)?,
            "start_epoch" => self.start_epoch = num(v).map_err(bad)?,
            "span_days" => self.span_days = num(v).map_err(bad)?,
            "preference_mix" => {
                // e.g. "TT:motorway=0.4, DI=0.6"
                self.preference_mix = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (p, w) = item.rsplit_once('=').ok_or_else(|| format!("{item:?} is not PREF=WEIGHT"))?;
                        Ok((p.trim().parse::<PreferenceVector>()?, num::<f64>(w.trim())?))
                    })
                    .collect::<std::result::Result<_, String>>()
                    .map_err(bad)?;
            }
            k if k.starts_with("speed.") => {
                let t: RoadType = k["speed.".len()..].parse().map_err(|_| bad("unknown road type".into()))?;
                plan.speeds_kmh[t.code() as usize - 1] = num(v).map_err(bad)?;
            }
            k if k.starts_with("plant.") => {
                // plant.<origin block>.<destination block> = PREF
                let mut parts = k["plant.".len()..].split('.');
                let (Some(o), Some(d), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(bad("expected plant.<origin>.<destination>".into()));
                };
                let pair = BlockPair {
                    origin: num(o).map_err(bad)?,
                    destination: num(d).map_err(bad)?,
                };
                let preference = v.parse().map_err(bad)?;
                self.planted_preferences.retain(|p| p.pair != pair);
                self.planted_preferences.push(PlantedPreference { pair, preference });
            }
            _ => return Err(Error::InvalidArgument(format!("unknown synthetic setting {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let plan = &self.road_type_plan;
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return bad("grid needs at least 2 rows and 2 columns");
        }
        if !(self.spacing_m > 0.0) || !(0.0..0.5).contains(&self.jitter) {
            return bad("spacing must be positive and jitter in [0, 0.5)");
        }
        if plan.row_types.is_empty() || plan.col_types.is_empty() {
            return bad("road type plan needs row and column types");
        }
        if plan.speeds_kmh.iter().any(|s| !(*s > 0.0)) {
            return bad("speeds must be positive");
        }
        if plan.families.iter().any(|f| f.is_empty() || f.contains(&RoadType::Motorway)) {
            return bad("road type families must be non-empty and exclude motorway");
        }
        if plan.ramp_every < 2 {
            return bad("ramp_every must be at least 2");
        }
        if plan.motorway_rows.iter().any(|&r| r >= self.grid_rows) || plan.motorway_cols.iter().any(|&c| c >= self.grid_cols) {
            return bad("motorway outside the grid");
        }
        if self.block_rows == 0 || self.block_cols == 0 || self.block_rows > self.grid_rows || self.block_cols > self.grid_cols {
            return bad("block grid must fit in the street grid");
        }
        let blocks = self.block_rows * self.block_cols;
        if self.planted_preferences.iter().any(|p| p.pair.origin >= blocks || p.pair.destination >= blocks) {
            return bad("planted block pair out of range");
        }
        if self.preference_mix.is_empty() || self.preference_mix.iter().any(|(_, w)| !(*w >= 0.0)) || self.preference_mix.iter().all(|(_, w)| *w == 0.0) {
            return bad("preference mix needs a positive total weight");
        }
        if !(0.0..=1.0).contains(&self.detour_noise) || !(0.0..=1.0).contains(&self.hotspot_share) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.drivers == 0 || self.span_days == 0 {
            return bad("drivers and span_days must be positive");
        }
        if self.min_trip_cells >= self.grid_rows + self.grid_cols - 2 {
            return bad("min_trip_cells exceeds the grid diameter");
        }
        Ok(())
    }

    fn block_of(&self, r: usize, c: usize) -> usize {
        (r * self.block_rows / self.grid_rows) * self.block_cols + c * self.block_cols / self.grid_cols
    }
}

/// A generated world: network, trips and the preferences behind them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub network: RoadNetwork,
    pub trajectories: Vec<Trajectory>,
    pub planted: Vec<PlantedPreference>,
    /// Preference each trajectory was generated with, by position.
    pub trajectory_preferences: Vec<PreferenceVector>,
    pub detoured: Vec<bool>,
}

impl SyntheticWorld {
    pub fn grid_vertex(&self, cfg: &SyntheticConfig, r: usize, c: usize) -> VertexId {
        debug_assert!(r < cfg.grid_rows && c < cfg.grid_cols);
        VertexId((r * cfg.grid_cols + c) as u32)
    }
}

struct Builder {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

impl Builder {
    fn vertex(&mut self, lon: f64, lat: f64) -> VertexId {
        let id = VertexId::from(self.vertices.len());
        self.vertices.push(Vertex {
            original_id: id.0 as i64,
            lon,
            lat,
        });
        id
    }

    fn edge(&mut self, a: VertexId, b: VertexId, speed: f64, road_type: RoadType) {
        let (va, vb) = (&self.vertices[a.index()], &self.vertices[b.index()]);
        let length_m = planar_distance_m(va.lon, va.lat, vb.lon, vb.lat).max(1.0);
        self.edges.push(Edge {
            original_id: self.edges.len() as i64,
            from: a,
            to: b,
            length_m: (length_m * 100.0).round() / 100.0,
            speed_kmh: speed,
            road_type,
        });
    }

    fn both(&mut self, a: VertexId, b: VertexId, speed: f64, road_type: RoadType) {
        self.edge(a, b, speed, road_type);
        self.edge(b, a, speed, road_type);
    }
}

fn build_network(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<RoadNetwork> {
    let plan = &cfg.road_type_plan;
    let dlat = (cfg.spacing_m / EARTH_RADIUS_M).to_degrees();
    let dlon = dlat / cfg.origin_lat.to_radians().cos();
    let speed = |t: RoadType| plan.speeds_kmh[t.code() as usize - 1];
    let mut b = Builder {
        vertices: Vec::new(),
        edges: Vec::new(),
    };
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let grid = |r: usize, c: usize| VertexId((r * cols + c) as u32);
    let mut pos = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let jr = rng.gen_range(-cfg.jitter..=cfg.jitter);
            let jc = rng.gen_range(-cfg.jitter..=cfg.jitter);
            let (y, x) = (r as f64 + jr, c as f64 + jc);
            pos.push((y, x));
            b.vertex(cfg.origin_lon + x * dlon, cfg.origin_lat + y * dlat);
        }
    }
    let mut runs = |base: &[RoadType], lines: usize, len: usize| -> Vec<Vec<RoadType>> {
        let per = if plan.segment_cells == 0 { len.max(1) } else { plan.segment_cells };
        (0..lines)
            .map(|i| {
                let t = base[i % base.len()];
                let family = plan.families.iter().find(|f| f.first() == Some(&t));
                (0..len.div_ceil(per).max(1))
                    .map(|_| match family {
                        Some(f) if plan.segment_cells > 0 => f[rng.gen_range(0..f.len())],
                        _ => t,
                    })
                    .collect()
            })
            .collect()
    };
    let row_runs = runs(&plan.row_types, rows, cols - 1);
    let col_runs = runs(&plan.col_types, cols, rows - 1);
    let per = plan.segment_cells.max(1);
    let run_of = |k: usize| if plan.segment_cells == 0 { 0 } else { k / per };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let t = row_runs[r][run_of(c)];
                b.both(grid(r, c), grid(r, c + 1), speed(t), t);
            }
            if r + 1 < rows {
                let t = col_runs[c][run_of(r)];
                b.both(grid(r, c), grid(r + 1, c), speed(t), t);
            }
        }
    }

    let m = RoadType::Motorway;
    let ramp_speed = speed(RoadType::Primary);
    let half = plan.ramp_every / 2;
    let mut row_layers: Vec<(usize, Vec<VertexId>)> = Vec::new();
    for &r in &plan.motorway_rows {
        let layer: Vec<VertexId> = (0..cols)
            .map(|c| {
                let (y, x) = pos[r * cols + c];
                b.vertex(cfg.origin_lon + x * dlon, cfg.origin_lat + (y + 0.35) * dlat)
            })
            .collect();
        for c in 0..cols {
            if c + 1 < cols {
                b.both(layer[c], layer[c + 1], speed(m), m);
            }
            if c % plan.ramp_every == 0 {
                b.edge(grid(r, c), layer[c], ramp_speed, m);
            } else if c % plan.ramp_every == half {
                b.edge(layer[c], grid(r, c), ramp_speed, m);
            }
        }
        row_layers.push((r, layer));
    }
    for &c in &plan.motorway_cols {
        let layer: Vec<VertexId> = (0..rows)
            .map(|r| {
                let (y, x) = pos[r * cols + c];
                b.vertex(cfg.origin_lon + (x + 0.35) * dlon, cfg.origin_lat + y * dlat)
            })
            .collect();
        for r in 0..rows {
            if r + 1 < rows {
                b.both(layer[r], layer[r + 1], speed(m), m);
            }
            // offset by one so row and column ramps rarely share a vertex
            if (r + 1) % plan.ramp_every == 0 {
                b.edge(grid(r, c), layer[r], ramp_speed, m);
            } else if (r + 1) % plan.ramp_every == half {
                b.edge(layer[r], grid(r, c), ramp_speed, m);
            }
        }
        for (rr, row_layer) in &row_layers {
            b.both(row_layer[c], layer[*rr], speed(m), m);
        }
    }
    RoadNetwork::new(b.vertices, b.edges, FuelModel::default())
}

fn pick_weighted(mix: &[(PreferenceVector, f64)], rng: &mut ChaCha8Rng) -> PreferenceVector {
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (p, w) in mix {
        if x < *w {
            return *p;
        }
        x -= w;
    }
    mix.iter().rev().find(|(_, w)| *w > 0.0).expect("positive mix").0
}

/// Generates a world. A pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let network = build_network(cfg, &mut rng)?;

    let blocks = cfg.block_rows * cfg.block_cols;
    let mut planted = Vec::with_capacity(blocks * blocks);
    for origin in 0..blocks {
        for destination in 0..blocks {
            let pair = BlockPair { origin, destination };
            let drawn = pick_weighted(&cfg.preference_mix, &mut rng);
            let preference = cfg
                .planted_preferences
                .iter()
                .find(|p| p.pair == pair)
                .map_or(drawn, |p| p.preference);
            planted.push(PlantedPreference { pair, preference });
        }
    }
    let hotspots: Vec<(usize, usize)> = (0..cfg.hotspots)
        .map(|_| (rng.gen_range(0..cfg.grid_rows), rng.gen_range(0..cfg.grid_cols)))
        .collect();

    let sample_cell = |rng: &mut ChaCha8Rng| -> (usize, usize) {
        if !hotspots.is_empty() && rng.gen_bool(cfg.hotspot_share) {
            let (hr, hc) = hotspots[rng.gen_range(0..hotspots.len())];
            let rad = cfg.hotspot_radius as i64;
            let r = (hr as i64 + rng.gen_range(-rad..=rad)).clamp(0, cfg.grid_rows as i64 - 1);
            let c = (hc as i64 + rng.gen_range(-rad..=rad)).clamp(0, cfg.grid_cols as i64 - 1);
            (r as usize, c as usize)
        } else {
            (rng.gen_range(0..cfg.grid_rows), rng.gen_range(0..cfg.grid_cols))
        }
    };
    let vid = |(r, c): (usize, usize)| VertexId((r * cfg.grid_cols + c) as u32);

    let trips: Vec<(Trajectory, PreferenceVector, bool)> = (0..cfg.trajectory_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(i as u64 + 1);
            for _ in 0..MAX_RETRIES {
                let (s, d) = (sample_cell(&mut rng), sample_cell(&mut rng));
                if s.0.abs_diff(d.0) + s.1.abs_diff(d.1) < cfg.min_trip_cells {
                    continue;
                }
                let pair = BlockPair {
                    origin: cfg.block_of(s.0, s.1),
                    destination: cfg.block_of(d.0, d.1),
                };
                let pref = planted[pair.origin * blocks + pair.destination].preference;
                let detour = rng.gen_bool(cfg.detour_noise);
                let path = if detour {
                    let (r0, r1) = (s.0.min(d.0).saturating_sub(2), (s.0.max(d.0) + 2).min(cfg.grid_rows - 1));
                    let (c0, c1) = (s.1.min(d.1).saturating_sub(2), (s.1.max(d.1) + 2).min(cfg.grid_cols - 1));
                    let w = (rng.gen_range(r0..=r1), rng.gen_range(c0..=c1));
                    if w == s || w == d {
                        continue;
                    }
                    let first = preference_dijkstra(&network, pref, vid(s), vid(w));
                    let second = preference_dijkstra(&network, pref, vid(w), vid(d));
                    match (first, second) {
                        (Ok(mut a), Ok(b)) => {
                            a.extend(&b);
                            a.erase_loops()
                        }
                        _ => continue,
                    }
                } else {
                    match preference_dijkstra(&network, pref, vid(s), vid(d)) {
                        Ok(p) => p,
                        Err(_) => continue,
                    }
                };
                let departure = cfg.start_epoch
                    + rng.gen_range(0..cfg.span_days as i64) * 86_400
                    + rng.gen_range(6 * 3600..22 * 3600);
                let t = Trajectory {
                    traj_id: i as i64,
                    driver_id: rng.gen_range(0..cfg.drivers as i64),
                    departure,
                    path,
                };
                return Ok((t, pref, detour));
            }
            Err(Error::InvalidArgument(format!(
                "trajectory {i}: no routable origin-destination pair after {MAX_RETRIES} attempts"
            )))
        })
        .collect::<Result<_>>()?;

    let mut world = SyntheticWorld {
        network,
        trajectories: Vec::with_capacity(trips.len()),
        planted,
        trajectory_preferences: Vec::with_capacity(trips.len()),
        detoured: Vec::with_capacity(trips.len()),
    };
    for (t, p, d) in trips {
        world.trajectories.push(t);
        world.trajectory_preferences.push(p);
        world.detoured.push(d);
    }
    Ok(world)
}

/// Path a planted preference produces between two vertices.
pub fn planted_path(net: &RoadNetwork, pref: PreferenceVector, s: VertexId, d: VertexId) -> Result<Path> {
    preference_dijkstra(net, pref, s, d)
}
