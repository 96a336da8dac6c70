//! Transferring learned preferences from T-edges to B-edges.
//!
//! Region edges become vertices of a similarity graph `M`. Each feature
//! column `x` of the preference matrix is then found by solving
//! `(S + mu1 L + mu2 I) y_hat = S y` with `L = D - M`, the unnormalized
//! Laplacian, and `S` selecting the labelled rows.

use std::collections::HashMap;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{planar_distance_m, RoadNetwork, RoadType};
use crate::preference::{preference_jaccard, FeatureSpace, PreferenceVector};
use crate::region_graph::{EdgeKind, PreferenceSource, RegionGraphModel};
use crate::clustering::Region;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Similarities not exceeding this value are dropped. Compared against
    /// the raw similarity, which lies in `[0, 2]`.
    pub amr: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Road types kept per region when building pair features.
    pub k: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub null_threshold: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            amr: 0.7,
            mu1: 1.0,
            mu2: 0.01,
            k: 2,
            tolerance: 1e-6,
            max_iterations: 1000,
            null_threshold: 1e-9,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0) {
            return bad("mu1 and mu2 must be nonnegative");
        }
        if !self.amr.is_finite() {
            return bad("amr must be finite");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return bad("solver tolerance and iteration cap must be positive");
        }
        Ok(())
    }
}

/// Set of ordered road-type pairs, one bit per pair.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PairSet(u64);

impl PairSet {
    fn bit(a: RoadType, b: RoadType) -> u64 {
        1 << ((a.code() as u32 - 1) * 6 + (b.code() as u32 - 1))
    }

    pub fn product(from: &[RoadType], to: &[RoadType]) -> Self {
        let mut bits = 0;
        for &a in from {
            for &b in to {
                bits |= PairSet::bit(a, b);
            }
        }
        PairSet(bits)
    }

    pub fn contains(self, a: RoadType, b: RoadType) -> bool {
        self.0 & PairSet::bit(a, b) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn pairs(self) -> Vec<(RoadType, RoadType)> {
        let mut out = Vec::new();
        for a in RoadType::ALL {
            for b in RoadType::ALL {
                if self.contains(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Jaccard similarity; two empty sets are identical.
    pub fn jaccard(self, other: PairSet) -> f64 {
        let union = (self.0 | other.0).count_ones();
        if union == 0 {
            return 1.0;
        }
        (self.0 & other.0).count_ones() as f64 / union as f64
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct RegionEdgeFeatures {
    /// Distance between the two region centroids in meters.
    pub dis: f64,
    pub pairs: PairSet,
}

/// The `k` most frequent road types among edges incident to the region.
/// Ties go to the lower road-type code.
pub fn region_top_types(net: &RoadNetwork, region: &Region, k: usize) -> Vec<RoadType> {
    let mut edges: Vec<_> = region
        .members
        .iter()
        .flat_map(|&v| net.out_edges(v).iter().chain(net.in_edges(v)))
        .copied()
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let mut counts = [0usize; 6];
    for e in edges {
        counts[net.edge(e).road_type.code() as usize - 1] += 1;
    }
    let mut ranked: Vec<RoadType> = RoadType::ALL
        .into_iter()
        .filter(|t| counts[t.code() as usize - 1] > 0)
        .collect();
    ranked.sort_by_key(|t| (std::cmp::Reverse(counts[t.code() as usize - 1]), t.code()));
    ranked.truncate(k);
    ranked
}

pub fn region_edge_features(
    net: &RoadNetwork,
    model: &RegionGraphModel,
    edge: usize,
    k: usize,
) -> RegionEdgeFeatures {
    let e = model.edge(edge);
    let (a, b) = (model.region(e.from), model.region(e.to));
    features_of(a, b, &region_top_types(net, a, k), &region_top_types(net, b, k))
}

fn features_of(a: &Region, b: &Region, ta: &[RoadType], tb: &[RoadType]) -> RegionEdgeFeatures {
    RegionEdgeFeatures {
        dis: planar_distance_m(a.centroid.0, a.centroid.1, b.centroid.0, b.centroid.1),
        pairs: PairSet::product(ta, tb),
    }
}

/// Features of every region edge, in edge order.
pub fn all_features(net: &RoadNetwork, model: &RegionGraphModel, k: usize) -> Vec<RegionEdgeFeatures> {
    let tops: Vec<Vec<RoadType>> = model
        .regions()
        .par_iter()
        .map(|r| region_top_types(net, r, k))
        .collect();
    model
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (e.from.index(), e.to.index());
            features_of(model.region(e.from), model.region(e.to), &tops[a], &tops[b])
        })
        .collect()
}

/// Distance ratio plus pair-set Jaccard, in `[0, 2]`.
pub fn re_sim(a: &RegionEdgeFeatures, b: &RegionEdgeFeatures) -> f64 {
    let (lo, hi) = if a.dis <= b.dis { (a.dis, b.dis) } else { (b.dis, a.dis) };
    let ratio = if hi == 0.0 { 1.0 } else { lo / hi };
    ratio + a.pairs.jaccard(b.pairs)
}

/// Symmetric sparse matrix in compressed-row form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists sorted by column.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut m = SparseMatrix {
            n,
            row_start: Vec::with_capacity(n + 1),
            cols: Vec::new(),
            vals: Vec::new(),
        };
        m.row_start.push(0);
        for row in rows {
            for (c, v) in row {
                m.cols.push(c);
                m.vals.push(v);
            }
            m.row_start.push(m.cols.len());
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Thresholded similarity graph: `M[i][j] = reSim` when it exceeds `amr`.
pub fn build_adjacency(features: &[RegionEdgeFeatures], amr: f64) -> SparseMatrix {
    let rows = (0..features.len())
        .into_par_iter()
        .map(|i| {
            features
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .filter_map(|(j, f)| {
                    let s = re_sim(&features[i], f);
                    (s > amr).then_some((j, s))
                })
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

/// The thresholded similarity graph applied without materializing it.
///
/// Edges sharing a pair set share the Jaccard term, and within such a group
/// the entries above threshold for a fixed row form one contiguous run in
/// distance order. Products then reduce to prefix sums per group, in
/// O(n * groups) time and memory.
#[derive(Clone, Debug)]
pub struct SimilarityOperator {
    n: usize,
    /// Members of each group sorted by distance.
    groups: Vec<Vec<usize>>,
    /// Distances scaled by the largest one, per group in sorted order.
    scaled: Vec<Vec<f64>>,
    scale: f64,
    group_of: Vec<usize>,
    /// Distance of each row, scaled.
    own: Vec<f64>,
    /// Per row: (group, first, split, end) with `first..split` at or below
    /// the row's distance and `split..end` above it.
    runs: Vec<Vec<(u32, u32, u32, u32)>>,
    jaccard: Vec<Vec<f64>>,
    self_loop: Vec<bool>,
    nnz: usize,
}

impl SimilarityOperator {
    pub fn new(features: &[RegionEdgeFeatures], amr: f64) -> Self {
        let n = features.len();
        let mut index: HashMap<PairSet, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = vec![0; n];
        for (i, f) in features.iter().enumerate() {
            let g = *index.entry(f.pairs).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
            group_of[i] = g;
        }
        for g in &mut groups {
            g.sort_by(|&a, &b| features[a].dis.total_cmp(&features[b].dis).then(a.cmp(&b)));
        }
        let reps: Vec<PairSet> = groups.iter().map(|g| features[g[0]].pairs).collect();
        let jaccard: Vec<Vec<f64>> = reps
            .iter()
            .map(|a| reps.iter().map(|b| a.jaccard(*b)).collect())
            .collect();
        let scale = features.iter().map(|f| f.dis).fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let scaled: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|&j| features[j].dis / scale).collect())
            .collect();

        let runs: Vec<Vec<(u32, u32, u32, u32)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let fi = &features[i];
                let mut out = Vec::new();
                for (h, members) in groups.iter().enumerate() {
                    let inside = |j: usize| re_sim(fi, &features[j]) > amr;
                    let split = members.partition_point(|&j| features[j].dis <= fi.dis);
                    let first = members[..split].partition_point(|&j| !inside(j));
                    let end = split + members[split..].partition_point(|&j| inside(j));
                    if first < end {
                        out.push((h as u32, first as u32, split as u32, end as u32));
                    }
                }
                out
            })
            .collect();
        let self_loop: Vec<bool> = features.iter().map(|f| re_sim(f, f) > amr).collect();
        let own = features.iter().map(|f| f.dis / scale).collect();
        let nnz = runs
            .iter()
            .map(|r| r.iter().map(|&(_, a, _, b)| (b - a) as usize).sum::<usize>())
            .sum::<usize>()
            - self_loop.iter().filter(|&&s| s).count();
        SimilarityOperator {
            n,
            groups,
            scaled,
            scale,
            group_of,
            own,
            runs,
            jaccard,
            self_loop,
            nnz,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// `out = M x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        // prefix sums of x and d x, suffix sums of x / d, per group
        let sums: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = self
            .groups
            .iter()
            .zip(&self.scaled)
            .map(|(g, d)| {
                let k = g.len();
                let (mut px, mut pdx, mut sxd) = (vec![0.0; k + 1], vec![0.0; k + 1], vec![0.0; k + 1]);
                for t in 0..k {
                    px[t + 1] = px[t] + x[g[t]];
                    pdx[t + 1] = pdx[t] + d[t] * x[g[t]];
                }
                for t in (0..k).rev() {
                    sxd[t] = sxd[t + 1] + if d[t] > 0.0 { x[g[t]] / d[t] } else { 0.0 };
                }
                (px, pdx, sxd)
            })
            .collect();
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let gi = self.group_of[i];
            let di = self.own[i];
            let mut acc = 0.0;
            for &(h, a, m, b) in &self.runs[i] {
                let (h, a, m, b) = (h as usize, a as usize, m as usize, b as usize);
                let (px, pdx, sxd) = &sums[h];
                let j = self.jaccard[gi][h];
                acc += j * (px[b] - px[a]);
                if di > 0.0 {
                    acc += (pdx[m] - pdx[a]) / di + di * (sxd[m] - sxd[b]);
                } else {
                    acc += px[m] - px[a];
                }
            }
            if self.self_loop[i] {
                acc -= (1.0 + self.jaccard[gi][gi]) * x[i];
            }
            *o = acc;
        });
    }

    /// Calls `f(i, j)` on enough similar pairs to connect every component.
    fn spanning_pairs(&self, mut f: impl FnMut(usize, usize)) {
        let mut cover: Vec<Vec<i64>> = self.groups.iter().map(|g| vec![0; g.len() + 1]).collect();
        for (i, runs) in self.runs.iter().enumerate() {
            for &(h, a, _, b) in runs {
                let (h, a, b) = (h as usize, a as usize, b as usize);
                let first = self.groups[h][a];
                if first != i {
                    f(i, first);
                } else if b - a > 1 {
                    f(i, self.groups[h][a + 1]);
                }
                if b - a >= 2 {
                    cover[h][a] += 1;
                    cover[h][b - 1] -= 1;
                }
            }
        }
        for (g, c) in self.groups.iter().zip(&cover) {
            let mut depth = 0;
            for t in 0..g.len().saturating_sub(1) {
                depth += c[t];
                if depth > 0 {
                    f(g[t], g[t + 1]);
                }
            }
        }
    }

    /// Dense copy, for small-instance checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        let mut e = vec![0.0; self.n];
        let mut col = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            self.mul(&e, &mut col);
            for i in 0..self.n {
                d[i][j] = col[i];
            }
            e[j] = 0.0;
        }
        d
    }

    /// Largest distance, the scale used internally.
    pub fn distance_scale(&self) -> f64 {
        self.scale
    }
}

/// Similarity graph, either explicit or implicit.
#[derive(Clone, Debug)]
pub enum Adjacency {
    Sparse(SparseMatrix),
    Implicit(SimilarityOperator),
}

impl From<SparseMatrix> for Adjacency {
    fn from(m: SparseMatrix) -> Self {
        Adjacency::Sparse(m)
    }
}

impl From<SimilarityOperator> for Adjacency {
    fn from(m: SimilarityOperator) -> Self {
        Adjacency::Implicit(m)
    }
}

impl Adjacency {
    pub fn dim(&self) -> usize {
        match self {
            Adjacency::Sparse(m) => m.dim(),
            Adjacency::Implicit(m) => m.dim(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Adjacency::Sparse(m) => m.nnz(),
            Adjacency::Implicit(m) => m.nnz(),
        }
    }

    /// `out = M x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Adjacency::Sparse(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m.row(i).map(|(j, v)| v * x[j]).sum();
                }
            }
            Adjacency::Implicit(m) => m.mul(x, out),
        }
    }

    fn for_each_link(&self, mut f: impl FnMut(usize, usize)) {
        match self {
            Adjacency::Sparse(m) => {
                for i in 0..m.dim() {
                    for (j, _) in m.row(i) {
                        f(i, j);
                    }
                }
            }
            Adjacency::Implicit(m) => m.spanning_pairs(f),
        }
    }
}

/// Row-major seed matrix: labelled rows carry ones at their preference's
/// master and slave columns, other rows are zero.
pub fn build_seed_matrix(
    labels: &[Option<PreferenceVector>],
    labelled: &[bool],
    space: &FeatureSpace,
) -> Result<Vec<Vec<f64>>> {
    labels
        .iter()
        .zip(labelled)
        .enumerate()
        .map(|(i, (pref, &is_labelled))| {
            let mut row = vec![0.0; space.len()];
            if !is_labelled {
                return Ok(row);
            }
            let pref = pref.ok_or_else(|| {
                Error::Model(format!("labelled region edge {i} has no learned preference"))
            })?;
            let missing = || Error::Model(format!("preference {pref} of region edge {i} is outside the feature space"));
            row[space.cost_column(pref.master).ok_or_else(missing)?] = 1.0;
            if let Some(c) = pref.slave {
                row[space.condition_column(c).ok_or_else(missing)?] = 1.0;
            }
            Ok(row)
        })
        .collect()
}

/// The transduction system for one feature space.
#[derive(Clone, Debug)]
pub struct TransferSystem {
    pub m: Adjacency,
    pub degree: Vec<f64>,
    pub labelled: Vec<bool>,
    /// Row-major `n x p` seed matrix.
    pub y: Vec<Vec<f64>>,
    pub mu1: f64,
    pub mu2: f64,
}

impl TransferSystem {
    pub fn new(
        m: impl Into<Adjacency>,
        labelled: Vec<bool>,
        y: Vec<Vec<f64>>,
        mu1: f64,
        mu2: f64,
    ) -> Result<Self> {
        let m = m.into();
        let n = m.dim();
        if labelled.len() != n || y.len() != n {
            return Err(Error::InvalidArgument("transfer system dimensions disagree".into()));
        }
        let mut degree = vec![0.0; n];
        m.mul(&vec![1.0; n], &mut degree);
        Ok(TransferSystem {
            m,
            degree,
            labelled,
            y,
            mu1,
            mu2,
        })
    }

    pub fn n(&self) -> usize {
        self.m.dim()
    }

    pub fn p(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    fn s(&self, i: usize) -> f64 {
        if self.labelled[i] {
            1.0
        } else {
            0.0
        }
    }

    /// `out = (S + mu1 L + mu2 I) x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.m.mul(x, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.s(i) + self.mu1 * self.degree[i] + self.mu2) * x[i] - self.mu1 * *o;
        }
    }

    /// `x^T L x`
    pub fn laplacian_form(&self, x: &[f64]) -> f64 {
        let mut mx = vec![0.0; self.n()];
        self.m.mul(x, &mut mx);
        (0..self.n()).map(|i| x[i] * (self.degree[i] * x[i] - mx[i])).sum()
    }

    pub fn column(&self, x: usize) -> Vec<f64> {
        self.y.iter().map(|r| r[x]).collect()
    }

    /// Errors when `mu2 = 0` leaves some similarity component without a
    /// labelled row, which makes the system matrix singular.
    pub fn check_nonsingular(&self) -> Result<()> {
        if self.mu2 > 0.0 {
            return Ok(());
        }
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        if self.mu1 > 0.0 {
            self.m.for_each_link(|i, j| {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            });
        }
        let mut has_label = vec![false; n];
        for i in 0..n {
            if self.labelled[i] {
                let r = find(&mut parent, i);
                has_label[r] = true;
            }
        }
        let unlabeled = (0..n).filter(|&i| !has_label[find(&mut parent, i)]).count();
        if unlabeled > 0 {
            return Err(Error::SingularSystem { unlabeled });
        }
        Ok(())
    }
}

/// Outcome of one column solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradient on column `column`. `observe`
/// sees every iterate.
pub fn solve_column(
    sys: &TransferSystem,
    column: usize,
    tolerance: f64,
    max_iterations: usize,
    mut observe: impl FnMut(&[f64]),
) -> Result<ColumnSolve> {
    let n = sys.n();
    let b: Vec<f64> = (0..n).map(|i| sys.s(i) * sys.y[i][column]).collect();
    let b_norm = norm(&b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(ColumnSolve {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = sys.s(i) + sys.mu1 * sys.degree[i] + sys.mu2;
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let mut r = b;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut residual = 1.0;
    for it in 1..=max_iterations {
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        observe(&x);
        residual = norm(&r) / b_norm;
        if residual <= tolerance {
            return Ok(ColumnSolve {
                x,
                iterations: it,
                residual,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        column,
        iterations: max_iterations,
        residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Solution {
    /// Row-major `n x p`.
    pub y_hat: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Solves every feature column, in parallel.
pub fn solve_transfer(sys: &TransferSystem, tolerance: f64, max_iterations: usize) -> Result<Solution> {
    sys.check_nonsingular()?;
    let columns: Vec<ColumnSolve> = (0..sys.p())
        .into_par_iter()
        .map(|c| solve_column(sys, c, tolerance, max_iterations, |_| {}))
        .collect::<Result<_>>()?;
    let n = sys.n();
    let mut y_hat = vec![vec![0.0; sys.p()]; n];
    for (c, col) in columns.iter().enumerate() {
        for (row, v) in y_hat.iter_mut().zip(&col.x) {
            row[c] = *v;
        }
    }
    Ok(Solution {
        y_hat,
        iterations: columns.iter().map(|c| c.iterations).collect(),
        residuals: columns.iter().map(|c| c.residual).collect(),
    })
}

/// The transduction objective summed over all columns.
pub fn objective(sys: &TransferSystem, y_hat: &[Vec<f64>]) -> f64 {
    (0..sys.p())
        .map(|c| {
            let yh: Vec<f64> = y_hat.iter().map(|r| r[c]).collect();
            let fit: f64 = (0..sys.n())
                .map(|i| sys.s(i) * (sys.y[i][c] - yh[i]).powi(2))
                .sum();
            fit + sys.mu1 * sys.laplacian_form(&yh) + sys.mu2 * dot(&yh, &yh)
        })
        .sum()
}

/// Reads a preference off one solved row, or `None` when every entry is
/// below `null_threshold`.
///
/// The slave is the strongest road condition, provided it outweighs the
/// mass of labelled neighbours that had no slave at all. That mass is the
/// cost-column total minus the condition-column total, since every seed
/// row carries exactly one cost and at most one condition.
pub fn extract_preference(row: &[f64], space: &FeatureSpace, null_threshold: f64) -> Option<PreferenceVector> {
    if row.iter().all(|&v| v < null_threshold) {
        return None;
    }
    let nc = space.costs().len();
    let (costs, conds) = row.split_at(nc);
    let master = space.costs()[argmax_first(costs)];
    let slave = if conds.is_empty() {
        None
    } else {
        let best = argmax_first(conds);
        let none_mass = costs.iter().sum::<f64>() - conds.iter().sum::<f64>();
        (conds[best] >= null_threshold && conds[best] > none_mass).then(|| space.conditions()[best])
    };
    Some(PreferenceVector::new(master, slave))
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn extract_preferences(y_hat: &[Vec<f64>], space: &FeatureSpace, null_threshold: f64) -> Vec<Option<PreferenceVector>> {
    y_hat
        .iter()
        .map(|r| extract_preference(r, space, null_threshold))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub amr: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub n: usize,
    pub nnz: usize,
    pub p: usize,
    pub iterations_per_column: Vec<usize>,
    pub residuals: Vec<f64>,
    pub null_rate: f64,
    pub wall_time_ms: u64,
}

/// Transfers T-edge preferences onto the B-edges of `model`. T-edges keep
/// their learned preferences.
pub fn transfer_preferences(
    net: &RoadNetwork,
    model: &mut RegionGraphModel,
    space: &FeatureSpace,
    config: &TransferConfig,
) -> Result<TransferReport> {
    config.validate()?;
    let start = Instant::now();
    let features = all_features(net, model, config.k);
    let m = SimilarityOperator::new(&features, config.amr);
    let labelled: Vec<bool> = model.edges().iter().map(|e| e.kind == EdgeKind::T).collect();
    let labels: Vec<Option<PreferenceVector>> = model.edges().iter().map(|e| e.preference).collect();
    let y = build_seed_matrix(&labels, &labelled, space)?;
    let nnz = m.nnz();
    debug!("transfer system: n = {}, nnz = {nnz}", m.dim());
    let sys = TransferSystem::new(m, labelled, y, config.mu1, config.mu2)?;
    let solution = solve_transfer(&sys, config.tolerance, config.max_iterations)?;

    let mut b_edges = 0usize;
    let mut nulls = 0usize;
    for (e, row) in model.edges_mut().iter_mut().zip(&solution.y_hat) {
        if e.kind != EdgeKind::B {
            continue;
        }
        b_edges += 1;
        e.preference = extract_preference(row, space, config.null_threshold);
        e.preference_source = Some(if e.preference.is_some() {
            PreferenceSource::Transferred
        } else {
            nulls += 1;
            PreferenceSource::NullFallback
        });
    }
    let report = TransferReport {
        amr: config.amr,
        mu1: config.mu1,
        mu2: config.mu2,
        n: sys.n(),
        nnz,
        p: sys.p(),
        iterations_per_column: solution.iterations,
        residuals: solution.residuals,
        null_rate: if b_edges == 0 { 0.0 } else { nulls as f64 / b_edges as f64 },
        wall_time_ms: start.elapsed().as_millis() as u64,
    };
    info!(
        "transferred preferences to {b_edges} B-edges ({nulls} null) in {} ms",
        report.wall_time_ms
    );
    Ok(report)
}

/// Hold-out check of the transfer step on T-edges alone.
///
/// T-edge preferences are shuffled into five partitions. The first is held
/// out, partitions `1..=train_partitions` serve as labels, and the mean
/// preference Jaccard on the held-out partition is returned. Null
/// predictions score zero.
pub fn holdout_accuracy(
    features: &[RegionEdgeFeatures],
    truth: &[PreferenceVector],
    train_partitions: usize,
    seed: u64,
    space: &FeatureSpace,
    config: &TransferConfig,
) -> Result<f64> {
    if !(1..=4).contains(&train_partitions) {
        return Err(Error::InvalidArgument("train partitions must be in 1..=4".into()));
    }
    if features.len() != truth.len() {
        return Err(Error::InvalidArgument("features and labels differ in length".into()));
    }
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut part = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        part[i] = rank % 5;
    }
    let labelled: Vec<bool> = part.iter().map(|&p| (1..=train_partitions).contains(&p)).collect();
    let labels: Vec<Option<PreferenceVector>> = truth.iter().copied().map(Some).collect();
    let y = build_seed_matrix(&labels, &labelled, space)?;
    let sys = TransferSystem::new(SimilarityOperator::new(features, config.amr), labelled, y, config.mu1, config.mu2)?;
    let solution = solve_transfer(&sys, config.tolerance, config.max_iterations)?;
    let held: Vec<usize> = (0..n).filter(|&i| part[i] == 0).collect();
    if held.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = held
        .iter()
        .map(|&i| {
            extract_preference(&solution.y_hat[i], space, config.null_threshold)
                .map_or(0.0, |p| preference_jaccard(&p, &truth[i]))
        })
        .sum();
    Ok(total / held.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::CostKind;
    use crate::preference::RoadCondition;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use RoadType::*;

    fn feat(dis: f64, from: &[RoadType], to: &[RoadType]) -> RegionEdgeFeatures {
        RegionEdgeFeatures {
            dis,
            pairs: PairSet::product(from, to),
        }
    }

    #[test]
    fn cartesian_pairs() {
        let f = PairSet::product(&[Motorway, Trunk], &[Primary, Secondary]);
        assert_eq!(
            f.pairs(),
            vec![(Motorway, Primary), (Motorway, Secondary), (Trunk, Primary), (Trunk, Secondary)]
        );
        assert_eq!(PairSet::product(&[Motorway], &[Primary, Secondary]).len(), 2);
        assert!(!f.contains(Primary, Motorway));
    }

    #[test]
    fn re_sim_fixtures() {
        let a = feat(10_000.0, &[Motorway], &[Primary, Secondary]);
        assert_eq!(re_sim(&a, &a), 2.0);
        let b = feat(20_000.0, &[Motorway], &[Primary]);
        // ratio 1/2, Jaccard 1/2
        assert_relative_eq!(re_sim(&a, &b), 1.0, epsilon = 1e-15);
        let c = feat(2_500.0, &[Trunk], &[Trunk]);
        assert_relative_eq!(re_sim(&a, &c), 0.25, epsilon = 1e-15);
        let z = feat(0.0, &[Trunk], &[Trunk]);
        assert_eq!(re_sim(&z, &z), 2.0);
    }

    #[test]
    fn adjacency_thresholds_and_is_symmetric() {
        let fs = [
            feat(100.0, &[Motorway], &[Motorway]),
            feat(100.0, &[Trunk], &[Trunk]),
            feat(50.0, &[Motorway], &[Motorway]),
        ];
        let m = build_adjacency(&fs, 0.7);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.to_dense(), transpose(&m.to_dense()));
        assert_eq!(build_adjacency(&fs, 1.0).nnz(), 2);
        assert_eq!(build_adjacency(&fs[..1], 0.0).nnz(), 0);
    }

    fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..a.len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
    }

    /// Two costs and three conditions: motorway, trunk and both.
    fn small_space() -> FeatureSpace {
        FeatureSpace::new(
            vec![CostKind::Distance, CostKind::TravelTime],
            vec![
                RoadCondition::single(Motorway),
                RoadCondition::single(Trunk),
                RoadCondition::of(&[Motorway, Trunk]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn seed_rows() {
        let space = small_space();
        let labels = [
            Some(PreferenceVector::with_road(CostKind::Distance, Motorway)),
            Some(PreferenceVector::with_road(CostKind::TravelTime, Trunk)),
            None,
        ];
        let y = build_seed_matrix(&labels, &[true, true, false], &space).unwrap();
        assert_eq!(y[0], vec![1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(y[1], vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(y[2], vec![0.0; 5]);
        assert!(build_seed_matrix(&labels, &[true, true, true], &space).is_err());
    }

    /// The four-edge worked example: two T-edges, two B-edges.
    fn worked_example(mu1: f64, mu2: f64) -> TransferSystem {
        let m = SparseMatrix::from_rows(vec![
            vec![(2, 0.9), (3, 0.7)],
            vec![(3, 0.8)],
            vec![(0, 0.9), (3, 0.7)],
            vec![(0, 0.7), (1, 0.8), (2, 0.7)],
        ]);
        let labels = [
            Some(PreferenceVector::with_road(CostKind::Distance, Motorway)),
            Some(PreferenceVector::with_road(CostKind::TravelTime, Trunk)),
            None,
            None,
        ];
        let labelled = vec![true, true, false, false];
        let y = build_seed_matrix(&labels, &labelled, &small_space()).unwrap();
        TransferSystem::new(m, labelled, y, mu1, mu2).unwrap()
    }

    #[test]
    fn worked_example_degrees_and_laplacian() {
        let sys = worked_example(1.0, 0.01);
        for (d, want) in sys.degree.iter().zip([1.6, 0.8, 1.6, 2.2]) {
            assert_relative_eq!(*d, want, epsilon = 1e-12);
        }
        let ones = vec![1.0; 4];
        assert_relative_eq!(sys.laplacian_form(&ones), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn worked_example_transfers_expected_preferences() {
        // re4 only sides with its direct TT neighbour once regularization
        // dominates smoothing; with strong smoothing DI reaches it via re3.
        let sys = worked_example(0.1, 1.0);
        let sol = solve_transfer(&sys, 1e-10, 1000).unwrap();
        let prefs = extract_preferences(&sol.y_hat, &small_space(), 1e-9);
        assert_eq!(prefs[2], Some(PreferenceVector::with_road(CostKind::Distance, Motorway)));
        assert_eq!(prefs[3], Some(PreferenceVector::with_road(CostKind::TravelTime, Trunk)));

        let sys = worked_example(1.0, 0.01);
        let sol = solve_transfer(&sys, 1e-10, 1000).unwrap();
        let prefs = extract_preferences(&sol.y_hat, &small_space(), 1e-9);
        assert_eq!(prefs[2], Some(PreferenceVector::with_road(CostKind::Distance, Motorway)));
        assert_eq!(prefs[3], Some(PreferenceVector::with_road(CostKind::Distance, Motorway)));
    }

    #[test]
    fn two_edge_system_inherits_fully() {
        let m = SparseMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let y = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let sys = TransferSystem::new(m, vec![true, false], y, 1.0, 0.0).unwrap();
        let sol = solve_transfer(&sys, 1e-12, 100).unwrap();
        assert_relative_eq!(sol.y_hat[0][0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.y_hat[1][0], 1.0, epsilon = 1e-9);
        assert_eq!(sol.y_hat[0][1], 0.0);
        assert_eq!(sol.y_hat[1][1], 0.0);
    }

    #[test]
    fn all_labelled_without_smoothing_returns_seed() {
        let m = SparseMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let y = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sys = TransferSystem::new(m, vec![true, true], y.clone(), 0.0, 0.0).unwrap();
        assert_eq!(solve_transfer(&sys, 1e-12, 100).unwrap().y_hat, y);
    }

    #[test]
    fn unlabelled_component_is_singular_without_regularization() {
        let m = SparseMatrix::from_rows(vec![vec![], vec![(2, 1.0)], vec![(1, 1.0)]]);
        let y = vec![vec![1.0], vec![0.0], vec![0.0]];
        let sys = TransferSystem::new(m.clone(), vec![true, false, false], y.clone(), 1.0, 0.0).unwrap();
        assert!(matches!(solve_transfer(&sys, 1e-9, 100), Err(Error::SingularSystem { unlabeled: 2 })));
        let sys = TransferSystem::new(m, vec![true, false, false], y, 1.0, 0.01).unwrap();
        let sol = solve_transfer(&sys, 1e-9, 100).unwrap();
        assert_eq!(sol.y_hat[1][0], 0.0);
        let row = [sol.y_hat[1][0], 0.0, 0.0, 0.0, 0.0];
        assert!(extract_preference(&row, &small_space(), 1e-9).is_none());
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let sys = worked_example(1.0, 0.01);
        match solve_column(&sys, 0, 1e-14, 1, |_| {}) {
            Err(Error::NotConverged { column: 0, iterations: 1, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extraction_rules() {
        let space = small_space();
        assert_eq!(extract_preference(&[0.0; 5], &space, 1e-9), None);
        assert_eq!(extract_preference(&[0.4, 0.4, 0.0, 0.0, 0.0], &space, 1e-9), Some(PreferenceVector::plain(CostKind::Distance)));
        // condition outweighed by slave-free mass
        assert_eq!(extract_preference(&[0.2, 0.6, 0.3, 0.0, 0.0], &space, 1e-9), Some(PreferenceVector::plain(CostKind::TravelTime)));
        assert_eq!(
            extract_preference(&[0.2, 0.6, 0.1, 0.5, 0.0], &space, 1e-9),
            Some(PreferenceVector::with_road(CostKind::TravelTime, Trunk))
        );
    }

    #[test]
    fn holdout_is_deterministic_and_bounded() {
        let space = FeatureSpace::default();
        let features: Vec<_> = (0..40).map(|i| feat(100.0 * (1 + i % 4) as f64, &[Motorway], &[Trunk])).collect();
        let truth: Vec<_> = (0..40).map(|i| if i % 4 < 2 { PreferenceVector::plain(CostKind::Distance) } else { PreferenceVector::with_road(CostKind::TravelTime, Motorway) }).collect();
        let cfg = TransferConfig::default();
        let a = holdout_accuracy(&features, &truth, 4, 7, &space, &cfg).unwrap();
        assert_eq!(a, holdout_accuracy(&features, &truth, 4, 7, &space, &cfg).unwrap());
        assert!((0.0..=1.0).contains(&a));
        assert!(holdout_accuracy(&features, &truth, 5, 7, &space, &cfg).is_err());
    }

    fn random_system(n: usize, p: usize, density: f64, seed: u64) -> TransferSystem {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < density {
                    let v = rng.gen_range(0.5..2.0);
                    rows[i].push((j, v));
                    rows[j].push((i, v));
                }
            }
        }
        for r in &mut rows {
            r.sort_by_key(|x| x.0);
        }
        let labelled: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let y = (0..n)
            .map(|i| (0..p).map(|_| if labelled[i] && rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect())
            .collect();
        TransferSystem::new(SparseMatrix::from_rows(rows), labelled, y, 1.0, 0.05).unwrap()
    }

    proptest! {
        #[test]
        fn laplacian_is_psd(seed in 0u64..500, x in prop::collection::vec(-5.0f64..5.0, 12)) {
            let sys = random_system(12, 1, 0.3, seed);
            prop_assert!(sys.laplacian_form(&x) >= -1e-9);
            for i in 0..12 {
                let Adjacency::Sparse(m) = &sys.m else { unreachable!() };
                let row: f64 = m.row(i).map(|(_, v)| v).sum();
                prop_assert!((sys.degree[i] - row).abs() < 1e-12);
            }
        }

        #[test]
        fn solution_improves_on_seed(seed in 0u64..500) {
            let sys = random_system(20, 3, 0.2, seed);
            let sol = solve_transfer(&sys, 1e-10, 1000).unwrap();
            prop_assert!(objective(&sys, &sol.y_hat) <= objective(&sys, &sys.y) + 1e-9);
        }
    
        #[test]
        fn implicit_operator_matches_explicit_matrix(
            seed in 0u64..1000,
            n in 1usize..40,
            amr in 0.0f64..2.0,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let types = [Trunk, Primary, Secondary, Residential];
            let fs: Vec<RegionEdgeFeatures> = (0..n)
                .map(|_| {
                    let a = &types[rng.gen_range(0..2)..rng.gen_range(2..4)];
                    let b = &types[rng.gen_range(1..3)..rng.gen_range(3..5).min(4)];
                    // a few repeated and zero distances to exercise ties
                    let dis = match rng.gen_range(0..6) {
                        0 => 0.0,
                        1 => 500.0,
                        _ => rng.gen_range(10.0..5000.0),
                    };
                    feat(dis, a, b)
                })
                .collect();
            let explicit = build_adjacency(&fs, amr);
            let implicit = SimilarityOperator::new(&fs, amr);
            prop_assert_eq!(implicit.nnz(), explicit.nnz());
            let (de, di) = (explicit.to_dense(), implicit.to_dense());
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((de[i][j] - di[i][j]).abs() < 1e-12, "{} {} {} {}", i, j, de[i][j], di[i][j]);
                }
            }
            let labelled: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let y = vec![vec![0.0; 2]; n];
            let a = TransferSystem::new(explicit, labelled.clone(), y.clone(), 1.0, 0.0).unwrap();
            let b = TransferSystem::new(implicit, labelled, y, 1.0, 0.0).unwrap();
            prop_assert_eq!(a.check_nonsingular().is_ok(), b.check_nonsingular().is_ok());
        }
}
}
