//! Routing preferences, path similarity and per-edge preference learning.
//!
//! A preference is a pair `<master, slave>`: the travel cost being minimized
//! and an optional road-condition feature the route should stick to.
//! Learning is a two-stage coordinate search: pick the best master on its
//! own, then the slave (if any) that strictly improves on it.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::apply_pref;
use crate::error::{Error, Result};
use crate::netmodel::{CostKind, EdgeId, Path, RoadNetwork, RoadType, VertexId};
use crate::region_graph::PathRecord;
use crate::search::{self, Direction, SearchTree};

/// A road-condition feature: one road type or a declared group such as
/// motorway+residential. An edge satisfies it when its type is in the group.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoadCondition(u8);

impl RoadCondition {
    pub fn single(t: RoadType) -> Self {
        RoadCondition(1 << (t.code() - 1))
    }

    pub fn of(types: &[RoadType]) -> Self {
        RoadCondition(types.iter().fold(0, |acc, t| acc | 1 << (t.code() - 1)))
    }

    #[inline]
    pub fn admits(self, t: RoadType) -> bool {
        self.0 & (1 << (t.code() - 1)) != 0
    }

    pub fn types(self) -> impl Iterator<Item = RoadType> {
        RoadType::ALL.into_iter().filter(move |&t| self.admits(t))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for RoadCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.types().map(RoadType::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for RoadCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let types = s
            .split('+')
            .map(|p| p.trim().parse::<RoadType>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RoadCondition::of(&types))
    }
}

impl Serialize for RoadCondition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoadCondition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub master: CostKind,
    pub slave: Option<RoadCondition>,
}

impl PreferenceVector {
    pub fn new(master: CostKind, slave: Option<RoadCondition>) -> Self {
        PreferenceVector { master, slave }
    }

    pub fn plain(master: CostKind) -> Self {
        PreferenceVector {
            master,
            slave: None,
        }
    }

    pub fn with_road(master: CostKind, road: RoadType) -> Self {
        PreferenceVector {
            master,
            slave: Some(RoadCondition::single(road)),
        }
    }

    /// Fallback used for region edges without a usable preference.
    pub fn fastest() -> Self {
        Self::plain(CostKind::TravelTime)
    }
}

impl fmt::Display for PreferenceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slave {
            Some(s) => write!(f, "<{}, {}>", self.master, s),
            None => write!(f, "<{}, none>", self.master),
        }
    }
}

impl FromStr for PreferenceVector {
    type Err = String;

    /// Parses `TT`, `TT:motorway` or `DI:motorway+residential`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, slave) = match s.split_once(':') {
            Some((m, "none")) | Some((m, "")) => (m, None),
            Some((m, sl)) => (m, Some(sl.parse()?)),
            None => (s, None),
        };
        Ok(PreferenceVector::new(m.trim().parse()?, slave))
    }
}

/// Ordered cost and road-condition features; their concatenation defines the
/// columns of the transfer matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    costs: Vec<CostKind>,
    conditions: Vec<RoadCondition>,
}

impl Default for FeatureSpace {
    fn default() -> Self {
        FeatureSpace {
            costs: CostKind::ALL.to_vec(),
            conditions: RoadType::ALL.iter().map(|&t| RoadCondition::single(t)).collect(),
        }
    }
}

impl FeatureSpace {
    pub fn new(costs: Vec<CostKind>, conditions: Vec<RoadCondition>) -> Result<Self> {
        if costs.is_empty() || conditions.is_empty() {
            return Err(Error::InvalidArgument(
                "feature lists must not be empty".into(),
            ));
        }
        let unique_costs: HashSet<_> = costs.iter().collect();
        let unique_conditions: HashSet<_> = conditions.iter().collect();
        if unique_costs.len() != costs.len() || unique_conditions.len() != conditions.len() {
            return Err(Error::InvalidArgument(
                "feature lists must be duplicate-free".into(),
            ));
        }
        if conditions.iter().any(|c| c.is_empty()) {
            return Err(Error::InvalidArgument("empty road condition".into()));
        }
        Ok(FeatureSpace { costs, conditions })
    }

    pub fn costs(&self) -> &[CostKind] {
        &self.costs
    }

    pub fn conditions(&self) -> &[RoadCondition] {
        &self.conditions
    }

    /// Total feature count `p`.
    pub fn len(&self) -> usize {
        self.costs.len() + self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cost_column(&self, kind: CostKind) -> Option<usize> {
        self.costs.iter().position(|&c| c == kind)
    }

    pub fn condition_column(&self, cond: RoadCondition) -> Option<usize> {
        self.conditions
            .iter()
            .position(|&c| c == cond)
            .map(|i| i + self.costs.len())
    }

    /// Every preference expressible in this space, slave-free ones included.
    pub fn all_vectors(&self) -> Vec<PreferenceVector> {
        let mut out = Vec::new();
        for &m in &self.costs {
            out.push(PreferenceVector::plain(m));
            for &c in &self.conditions {
                out.push(PreferenceVector::new(m, Some(c)));
            }
        }
        out
    }
}

fn sorted_edges(p: &Path) -> Vec<EdgeId> {
    let mut v = p.edges().to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Lengths of the shared edges, the first path's edges and the union, summed
/// in edge-id order so results are reproducible bit for bit.
fn overlap_lengths(net: &RoadNetwork, a: &Path, b: &Path) -> (f64, f64, f64) {
    let (a, b) = (sorted_edges(a), sorted_edges(b));
    let len = |e: EdgeId| net.edge(e).length_m;
    let (mut shared, mut first, mut union) = (0.0, 0.0, 0.0);
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                shared += len(x);
                first += len(x);
                union += len(x);
                i += 1;
                j += 1;
            }
            (Some(&x), Some(&y)) if x < y => {
                first += len(x);
                union += len(x);
                i += 1;
            }
            (Some(&x), None) => {
                first += len(x);
                union += len(x);
                i += 1;
            }
            (_, Some(&y)) => {
                union += len(y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (shared, first, union)
}

/// Shared edge length divided by the truth path's length. Edges are compared
/// by directed edge id; repeated edges count once.
pub fn psim_intersection(net: &RoadNetwork, truth: &Path, candidate: &Path) -> Result<f64> {
    if truth.is_trivial() {
        return Err(Error::InvalidArgument(
            "similarity needs a truth path with at least one edge".into(),
        ));
    }
    let (shared, total, _) = overlap_lengths(net, truth, candidate);
    Ok((shared / total).clamp(0.0, 1.0))
}

/// Shared edge length divided by the length of the union of both paths.
pub fn psim_union(net: &RoadNetwork, truth: &Path, candidate: &Path) -> Result<f64> {
    if truth.is_trivial() && candidate.is_trivial() {
        return Err(Error::InvalidArgument(
            "similarity needs at least one edge".into(),
        ));
    }
    let (shared, _, union) = overlap_lengths(net, truth, candidate);
    Ok((shared / union).clamp(0.0, 1.0))
}

/// Lowest-cost path under one cost feature.
pub fn lowest_cost_path(net: &RoadNetwork, s: VertexId, d: VertexId, master: CostKind) -> Result<Path> {
    search::shortest_path(net, s, d, master)
}

/// Source of candidate paths for learning.
pub trait PathPlanner: Sync {
    fn network(&self) -> &RoadNetwork;

    /// Unconstrained lowest-cost path.
    fn lowest(&self, s: VertexId, d: VertexId, master: CostKind) -> Option<Path>;

    /// Path found by the preference-constrained search.
    fn constrained(&self, s: VertexId, d: VertexId, pref: PreferenceVector) -> Option<Path>;
}

/// Runs a fresh search for every request.
pub struct DirectPlanner<'a> {
    net: &'a RoadNetwork,
}

impl<'a> DirectPlanner<'a> {
    pub fn new(net: &'a RoadNetwork) -> Self {
        DirectPlanner { net }
    }
}

impl PathPlanner for DirectPlanner<'_> {
    fn network(&self) -> &RoadNetwork {
        self.net
    }

    fn lowest(&self, s: VertexId, d: VertexId, master: CostKind) -> Option<Path> {
        lowest_cost_path(self.net, s, d, master).ok()
    }

    fn constrained(&self, s: VertexId, d: VertexId, pref: PreferenceVector) -> Option<Path> {
        apply_pref::preference_dijkstra(self.net, pref, s, d).ok()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
enum TreeKey {
    Plain(VertexId, CostKind),
    Constrained(VertexId, PreferenceVector),
}

/// Memoizes one-to-all search trees per source, so paths sharing a source
/// share the search. Trees are identical to the early-exit searches because
/// both settle vertices in the same order.
pub struct CachedPlanner<'a> {
    net: &'a RoadNetwork,
    trees: Mutex<HashMap<TreeKey, Arc<SearchTree>>>,
}

impl<'a> CachedPlanner<'a> {
    pub fn new(net: &'a RoadNetwork) -> Self {
        CachedPlanner {
            net,
            trees: Mutex::new(HashMap::new()),
        }
    }

    fn tree(&self, key: TreeKey) -> Arc<SearchTree> {
        if let Some(t) = self.trees.lock().unwrap().get(&key) {
            return t.clone();
        }
        let tree = Arc::new(match key {
            TreeKey::Plain(s, kind) => {
                search::shortest_path_tree(self.net, s, kind, Direction::Forward)
            }
            TreeKey::Constrained(s, pref) => apply_pref::preference_tree(self.net, pref, s),
        });
        self.trees
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(tree)
            .clone()
    }
}

impl PathPlanner for CachedPlanner<'_> {
    fn network(&self) -> &RoadNetwork {
        self.net
    }

    fn lowest(&self, s: VertexId, d: VertexId, master: CostKind) -> Option<Path> {
        self.tree(TreeKey::Plain(s, master)).path_to(self.net, d)
    }

    fn constrained(&self, s: VertexId, d: VertexId, pref: PreferenceVector) -> Option<Path> {
        self.tree(TreeKey::Constrained(s, pref)).path_to(self.net, d)
    }
}

/// Outcome of learning one region edge's preference.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedPreference {
    pub vector: PreferenceVector,
    /// Stage-one score per cost feature, in feature-space order.
    pub master_scores: Vec<f64>,
    /// Score of the returned vector.
    pub score: f64,
}

/// Count-weighted similarity between a path set and the paths a preference
/// produces between the same endpoints. Unroutable pairs score 0.
pub fn preference_score(
    planner: &dyn PathPlanner,
    paths: &[PathRecord],
    pref: PreferenceVector,
) -> Result<f64> {
    let net = planner.network();
    let mut total = 0.0;
    for rec in paths {
        let (s, d) = (rec.path.source(), rec.path.target());
        let candidate = match pref.slave {
            None => planner.lowest(s, d, pref.master),
            Some(_) => planner.constrained(s, d, pref),
        };
        if let Some(c) = candidate {
            total += rec.weight() * psim_intersection(net, &rec.path, &c)?;
        }
    }
    Ok(total)
}

const IMPROVEMENT_EPS: f64 = 1e-12;

/// Learns one preference for a path set: best master first, then the road
/// condition with the largest strict improvement, or none.
pub fn learn_preference(
    planner: &dyn PathPlanner,
    paths: &[PathRecord],
    space: &FeatureSpace,
) -> Result<LearnedPreference> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot learn a preference from an empty path set".into(),
        ));
    }
    if paths.iter().any(|p| p.path.is_trivial()) {
        return Err(Error::InvalidArgument(
            "region edge paths need at least one edge".into(),
        ));
    }

    let master_scores = space
        .costs()
        .iter()
        .map(|&m| preference_score(planner, paths, PreferenceVector::plain(m)))
        .collect::<Result<Vec<_>>>()?;
    let (best_master, base) = argmax_first(&master_scores);
    let master = space.costs()[best_master];

    let mut best = (PreferenceVector::plain(master), base);
    for &cond in space.conditions() {
        let pref = PreferenceVector::new(master, Some(cond));
        let score = preference_score(planner, paths, pref)?;
        if score > best.1 + IMPROVEMENT_EPS {
            best = (pref, score);
        }
    }

    Ok(LearnedPreference {
        vector: best.0,
        master_scores,
        score: best.1,
    })
}

/// Index and value of the first maximum.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Jaccard similarity of the feature sets of two preferences.
pub fn preference_jaccard(a: &PreferenceVector, b: &PreferenceVector) -> f64 {
    #[derive(PartialEq)]
    enum F {
        Cost(CostKind),
        Cond(RoadCondition),
    }
    let feats = |p: &PreferenceVector| {
        let mut v = vec![F::Cost(p.master)];
        if let Some(s) = p.slave {
            v.push(F::Cond(s));
        }
        v
    };
    let fa = feats(a);
    let fb = feats(b);
    let inter = fa.iter().filter(|f| fb.contains(f)).count();
    let union = fa.len() + fb.len() - inter;
    inter as f64 / union as f64
}
