//! Density-based clustering (DBSCAN) and the ROC-driven parameter sweep
//! used to pick station-detection parameters.
//!
//! Conventions, fixed so results are reproducible against the brute-force
//! reference in the test suite:
//!
//! * a point's eps-neighborhood includes the point itself, and `minpts`
//!   counts it;
//! * points are scanned in input order and cluster expansion visits
//!   neighbors in ascending index order, so border points attach to the
//!   first discovered core cluster and the labeling is fully
//!   deterministic;
//! * the default metric is Euclidean distance in raw degree space, which
//!   is how the epsilon and distance-threshold parameters are expressed.
//!   A haversine variant is available for metric-true runs (epsilon is
//!   converted at the equatorial degree scale).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::geo::{haversine_distance, EarthModel, GeoCoord};
use crate::{Error, Result};

pub const NOISE: i32 = -1;

/// Parameters for station-detection clustering. `dt_deg` is the centroid
/// match threshold used when comparing detections against ground truth and
/// when upserting into the stations database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub minpts: usize,
    pub eps_deg: f64,
    pub dt_deg: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        // Shipped operating point for station detection.
        ClusterParams { minpts: 100, eps_deg: 0.0002, dt_deg: 0.0003 }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.minpts < 1 {
            return Err(Error::InvalidConfig("minpts must be >= 1".into()));
        }
        if !(self.eps_deg.is_finite() && self.eps_deg > 0.0)
            || !(self.dt_deg.is_finite() && self.dt_deg > 0.0)
        {
            return Err(Error::InvalidConfig("eps_deg and dt_deg must be > 0".into()));
        }
        Ok(())
    }
}

/// Distance metric for neighborhood queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Euclidean distance in (lat, lon) degree space; eps in degrees.
    #[default]
    DegreeEuclidean,
    /// Great-circle meters; eps converted as eps_deg * meters-per-degree.
    HaversineMeters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Per-point cluster id (0-based) or [`NOISE`].
    pub labels: Vec<i32>,
    pub centroids: Vec<GeoCoord>,
    pub sizes: Vec<usize>,
}

impl ClusterResult {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    /// Member indices of one cluster, ascending.
    pub fn members(&self, cluster: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

struct DegreeGrid {
    cell_lat: f64,
    cell_lon: f64,
    min_lat: f64,
    min_lon: f64,
    cols: i64,
    /// cell index -> point indices, each list ascending.
    cells: std::collections::HashMap<i64, Vec<u32>>,
}

impl DegreeGrid {
    fn build(points: &[GeoCoord], cell_lat: f64, cell_lon: f64) -> Self {
        let min_lat = points.iter().map(|p| p.lat).fold(f64::INFINITY, f64::min);
        let min_lon = points.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min);
        let max_lon = points.iter().map(|p| p.lon).fold(f64::NEG_INFINITY, f64::max);
        let cols = (((max_lon - min_lon) / cell_lon).floor() as i64 + 3).max(3);
        let mut cells: std::collections::HashMap<i64, Vec<u32>> = std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let r = ((p.lat - min_lat) / cell_lat).floor() as i64;
            let c = ((p.lon - min_lon) / cell_lon).floor() as i64;
            cells.entry(r * cols + c).or_default().push(i as u32);
        }
        DegreeGrid { cell_lat, cell_lon, min_lat, min_lon, cols, cells }
    }

    /// Indices of all points in the 3x3 cell block around `p`, ascending.
    fn candidates(&self, p: GeoCoord, out: &mut Vec<u32>) {
        out.clear();
        let r = ((p.lat - self.min_lat) / self.cell_lat).floor() as i64;
        let c = ((p.lon - self.min_lon) / self.cell_lon).floor() as i64;
        for dr in -1..=1 {
            for dc in -1..=1 {
                if let Some(v) = self.cells.get(&((r + dr) * self.cols + (c + dc))) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
    }
}

struct NeighborIndex<'a> {
    points: &'a [GeoCoord],
    grid: DegreeGrid,
    metric: Metric,
    eps: f64,
    earth: EarthModel,
}

impl<'a> NeighborIndex<'a> {
    fn new(points: &'a [GeoCoord], eps_deg: f64, metric: Metric, earth: EarthModel) -> Self {
        // Cell sizes must be at least eps along each axis in degrees so a
        // 3x3 block covers the eps ball. For haversine, a degree of
        // longitude spans fewer meters away from the equator, so widen the
        // lon cells by the worst-case latitude in the data.
        let (eps, cell_lat, cell_lon) = match metric {
            Metric::DegreeEuclidean => (eps_deg, eps_deg, eps_deg),
            Metric::HaversineMeters => {
                let eps_m = eps_deg * earth.meters_per_degree();
                let max_abs_lat = points
                    .iter()
                    .map(|p| p.lat.abs())
                    .fold(0.0f64, f64::max)
                    .min(89.0);
                let lon_scale = max_abs_lat.to_radians().cos().max(1e-3);
                (eps_m, eps_deg, eps_deg / lon_scale)
            }
        };
        let grid = DegreeGrid::build(points, cell_lat, cell_lon);
        NeighborIndex { points, grid, metric, eps, earth }
    }

    fn distance(&self, a: GeoCoord, b: GeoCoord) -> f64 {
        match self.metric {
            Metric::DegreeEuclidean => {
                let d_lat = a.lat - b.lat;
                let d_lon = a.lon - b.lon;
                (d_lat * d_lat + d_lon * d_lon).sqrt()
            }
            Metric::HaversineMeters => haversine_distance(a, b, self.earth),
        }
    }

    /// Neighbor indices of point `i` (inclusive of `i`), ascending.
    fn neighbors(&self, i: usize, scratch: &mut Vec<u32>, out: &mut Vec<u32>) {
        let p = self.points[i];
        self.grid.candidates(p, scratch);
        out.clear();
        for &j in scratch.iter() {
            if self.distance(p, self.points[j as usize]) <= self.eps {
                out.push(j);
            }
        }
    }

    fn neighbor_count(&self, i: usize, scratch: &mut Vec<u32>) -> usize {
        let p = self.points[i];
        self.grid.candidates(p, scratch);
        scratch
            .iter()
            .filter(|&&j| self.distance(p, self.points[j as usize]) <= self.eps)
            .count()
    }
}

/// DBSCAN over geographic points.
///
/// Empty input yields an empty result. The expansion loop is sequential
/// (label assignment order is part of the contract); the core-point
/// determination pass fans out across threads when the `parallel` feature
/// is on.
pub fn dbscan(
    points: &[GeoCoord],
    minpts: usize,
    eps_deg: f64,
    metric: Metric,
    earth: EarthModel,
) -> ClusterResult {
    if points.is_empty() {
        return ClusterResult { labels: Vec::new(), centroids: Vec::new(), sizes: Vec::new() };
    }
    let index = NeighborIndex::new(points, eps_deg, metric, earth);

    let is_core: Vec<bool> = core_flags(&index, points.len(), minpts);

    const UNVISITED: i32 = -2;
    let mut labels = vec![UNVISITED; points.len()];
    let mut cluster: i32 = -1;
    let mut scratch = Vec::new();
    let mut neigh = Vec::new();
    let mut queue: VecDeque<u32> = VecDeque::new();

    for i in 0..points.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        if !is_core[i] {
            labels[i] = NOISE;
            continue;
        }
        cluster += 1;
        labels[i] = cluster;
        index.neighbors(i, &mut scratch, &mut neigh);
        queue.extend(neigh.iter().filter(|&&j| j as usize != i));
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if labels[j] == NOISE {
                // border point reached from a core neighborhood
                labels[j] = cluster;
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            if is_core[j] {
                index.neighbors(j, &mut scratch, &mut neigh);
                queue.extend(neigh.iter().filter(|&&k| labels[k as usize] < 0));
            }
        }
    }

    let n_clusters = (cluster + 1) as usize;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_clusters];
    for (p, &l) in points.iter().zip(&labels) {
        if l >= 0 {
            let s = &mut sums[l as usize];
            s.0 += p.lat;
            s.1 += p.lon;
            s.2 += 1;
        }
    }
    let centroids = sums
        .iter()
        .map(|&(lat, lon, n)| GeoCoord { lat: lat / n as f64, lon: lon / n as f64 })
        .collect();
    let sizes = sums.iter().map(|s| s.2).collect();
    ClusterResult { labels, centroids, sizes }
}

#[cfg(feature = "parallel")]
fn core_flags(index: &NeighborIndex<'_>, n: usize, minpts: usize) -> Vec<bool> {
    (0..n)
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| index.neighbor_count(i, scratch) >= minpts)
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn core_flags(index: &NeighborIndex<'_>, n: usize, minpts: usize) -> Vec<bool> {
    let mut scratch = Vec::new();
    (0..n).map(|i| index.neighbor_count(i, &mut scratch) >= minpts).collect()
}

/// One ground-truth stop place for evaluation: a centroid plus whether it
/// is a true station (the positive class) or some other stop place such as
/// a traffic light (the negative class).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthCentroid {
    pub coord: GeoCoord,
    pub is_station: bool,
}

/// Confusion outcome of matching detected centroids against ground truth.
///
/// FPR uses detected-but-not-station places as false positives and the
/// non-station truth population as the negative class; with no non-station
/// truth it is 0 by convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Detected centroids matched to a non-station truth place.
    pub fp_matched_negative: usize,
    pub negatives: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

fn greedy_match(
    detected: &[GeoCoord],
    truth: &[GeoCoord],
    dt_deg: f64,
) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d_lat = d.lat - t.lat;
            let d_lon = d.lon - t.lon;
            let dist = (d_lat * d_lat + d_lon * d_lon).sqrt();
            if dist <= dt_deg {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            matches.push((i, j));
        }
    }
    matches
}

/// Greedy nearest-first one-to-one matching of detected centroids against
/// labeled truth centroids within `dt_deg` (degree-space distance).
pub fn match_centroids(detected: &[GeoCoord], truth: &[TruthCentroid], dt_deg: f64) -> MatchOutcome {
    let stations: Vec<GeoCoord> =
        truth.iter().filter(|t| t.is_station).map(|t| t.coord).collect();
    let negatives: Vec<GeoCoord> =
        truth.iter().filter(|t| !t.is_station).map(|t| t.coord).collect();

    let station_matches = greedy_match(detected, &stations, dt_deg);
    let tp = station_matches.len();
    let fn_ = stations.len() - tp;

    let matched_d: std::collections::HashSet<usize> =
        station_matches.iter().map(|&(i, _)| i).collect();
    let leftover: Vec<GeoCoord> = detected
        .iter()
        .enumerate()
        .filter(|(i, _)| !matched_d.contains(i))
        .map(|(_, c)| *c)
        .collect();
    let fp = leftover.len();
    let fp_matched_negative = greedy_match(&leftover, &negatives, dt_deg).len();

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let recall = ratio(tp, tp + fn_);
    MatchOutcome {
        tp,
        fp,
        fn_,
        fp_matched_negative,
        negatives: negatives.len(),
        tpr: recall,
        fpr: ratio(fp_matched_negative, negatives.len()),
        precision: ratio(tp, tp + fp),
        recall,
    }
}

/// One evaluated grid point of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub minpts: usize,
    pub eps_deg: f64,
    pub dt_deg: f64,
    pub outcome: MatchOutcome,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub chosen: SweepPoint,
}

impl SweepOutcome {
    /// ROC rows as CSV ready for plotting, one curve per minpts.
    pub fn roc_csv(&self) -> String {
        let mut out =
            String::from("minpts,eps_deg,dt_deg,clusters,tp,fp,fn,tpr,fpr,precision,recall\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                p.minpts,
                p.eps_deg,
                p.dt_deg,
                p.clusters,
                p.outcome.tp,
                p.outcome.fp,
                p.outcome.fn_,
                p.outcome.tpr,
                p.outcome.fpr,
                p.outcome.precision,
                p.outcome.recall
            ));
        }
        out
    }
}

/// Evaluate DBSCAN + centroid matching over the full parameter grid.
///
/// The chosen point maximizes TPR, breaking ties by lowest FPR, then
/// smallest eps, then smallest minpts and dt for full determinism. Grid
/// cells are independent; each (minpts, eps) pair runs one clustering and
/// shares it across dt values.
pub fn sweep_parameters(
    points: &[GeoCoord],
    truth: &[TruthCentroid],
    minpts_grid: &[usize],
    eps_grid: &[f64],
    dt_grid: &[f64],
    metric: Metric,
    earth: EarthModel,
) -> Result<SweepOutcome> {
    if minpts_grid.is_empty() || eps_grid.is_empty() || dt_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }

    let cells: Vec<(usize, f64)> = minpts_grid
        .iter()
        .flat_map(|&m| eps_grid.iter().map(move |&e| (m, e)))
        .collect();

    let eval_cell = |&(minpts, eps): &(usize, f64)| -> Vec<SweepPoint> {
        let result = dbscan(points, minpts, eps, metric, earth);
        dt_grid
            .iter()
            .map(|&dt| SweepPoint {
                minpts,
                eps_deg: eps,
                dt_deg: dt,
                outcome: match_centroids(&result.centroids, truth, dt),
                clusters: result.cluster_count(),
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let evaluated: Vec<Vec<SweepPoint>> = cells.par_iter().map(eval_cell).collect();
    #[cfg(not(feature = "parallel"))]
    let evaluated: Vec<Vec<SweepPoint>> = cells.iter().map(eval_cell).collect();

    let points_flat: Vec<SweepPoint> = evaluated.into_iter().flatten().collect();
    let chosen = points_flat
        .iter()
        .min_by(|a, b| {
            (-a.outcome.tpr, a.outcome.fpr, a.eps_deg, a.minpts, a.dt_deg)
                .partial_cmp(&(-b.outcome.tpr, b.outcome.fpr, b.eps_deg, b.minpts, b.dt_deg))
                .unwrap()
        })
        .cloned()
        .expect("non-empty grid");

    Ok(SweepOutcome { points: points_flat, chosen })
}
