//! Stationary-point detection, station vs. traffic-light discrimination,
//! platform geometry, and the persistent stations database.
//!
//! Riders inside a standing tram produce runs of near-zero-speed fixes;
//! those runs, pooled across traces and clustered, are the candidate stop
//! places. Stations are told apart from traffic lights by stop frequency
//! and dwell length, with boarding/alighting annotations as an override
//! (passengers only get on or off at stations).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterParams, Metric};
use crate::geo::{haversine_distance, EarthModel, GeoCoord};
use crate::network::LatLonBounds;
use crate::stats::median_lower;
use crate::trace::Trace;
use crate::{Error, Result};

/// One maximal run of consecutive low-speed points in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopInterval {
    pub device_id: String,
    pub t_start_ms: i64,
    pub t_end_ms: i64,
    pub centroid: GeoCoord,
    /// Coordinates of the run's member points.
    pub coords: Vec<GeoCoord>,
    pub has_board_event: bool,
}

impl StopInterval {
    pub fn dwell_s(&self) -> f64 {
        (self.t_end_ms - self.t_start_ms) as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Station,
    TrafficLight,
}

/// A discovered stop place. `mbr` holds the four corners of the
/// axis-aligned bounding rectangle as `[lat, lon]` pairs, in the order
/// (min,min), (min,max), (max,max), (max,min).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPlace {
    pub id: String,
    pub kind: StopKind,
    pub lat: f64,
    pub lon: f64,
    pub mbr: [[f64; 2]; 4],
    /// Longer MBR side in meters; stations only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub platform_length_m: Option<f64>,
    pub visit_count: usize,
    pub median_dwell_s: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    pub version: u32,
}

impl StopPlace {
    pub fn centroid(&self) -> GeoCoord {
        GeoCoord { lat: self.lat, lon: self.lon }
    }

    pub fn bounds(&self) -> LatLonBounds {
        LatLonBounds {
            min_lat: self.mbr[0][0],
            min_lon: self.mbr[0][1],
            max_lat: self.mbr[2][0],
            max_lon: self.mbr[2][1],
        }
    }

    pub fn contains(&self, c: GeoCoord) -> bool {
        self.bounds().contains(c)
    }
}

fn corners(b: LatLonBounds) -> [[f64; 2]; 4] {
    [
        [b.min_lat, b.min_lon],
        [b.min_lat, b.max_lon],
        [b.max_lat, b.max_lon],
        [b.max_lat, b.min_lon],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationConfig {
    /// "Nearly zero" speed bound for stationary points.
    pub v_thresh_mps: f64,
    /// Minimum run duration to count as a stop.
    pub min_dwell_s: f64,
    pub cluster: ClusterParams,
    /// Station rule: visits / traces passing must reach this fraction...
    pub f_min: f64,
    /// ...and the median dwell must reach this many seconds.
    pub t_min_dwell_s: f64,
    /// Below this many visits a cluster is a low-confidence traffic light.
    pub min_visits: usize,
    /// A trace "passes" a cluster if any of its points comes this close.
    pub pass_radius_m: f64,
    /// Buffering: stop intervals within this distance upstream of a
    /// station whose next stop is that station.
    pub upstream_m: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        StationConfig {
            v_thresh_mps: 0.5,
            min_dwell_s: 8.0,
            cluster: ClusterParams::default(),
            f_min: 0.5,
            t_min_dwell_s: 20.0,
            min_visits: 3,
            pass_radius_m: 50.0,
            upstream_m: 150.0,
        }
    }
}

/// Reported speeds where present, displacement/dt everywhere else.
fn effective_speeds(trace: &Trace, earth: EarthModel) -> Vec<f64> {
    let pts = &trace.points;
    let mut speeds = vec![0.0; pts.len()];
    for i in 0..pts.len() {
        speeds[i] = match pts[i].speed {
            Some(s) => s,
            None if i > 0 => {
                let dt = (pts[i].t_ms - pts[i - 1].t_ms) as f64 / 1000.0;
                if dt > 0.0 {
                    haversine_distance(pts[i - 1].coord, pts[i].coord, earth) / dt
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
    }
    // A speedless first point inherits its successor's estimate.
    if pts.len() > 1 && pts[0].speed.is_none() {
        speeds[0] = speeds[1];
    }
    speeds
}

/// Maximal runs of consecutive points with speed below `v_thresh_mps`
/// lasting at least `min_dwell_s`.
pub fn detect_stationary(
    trace: &Trace,
    v_thresh_mps: f64,
    min_dwell_s: f64,
    earth: EarthModel,
) -> Vec<StopInterval> {
    let speeds = effective_speeds(trace, earth);
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=trace.points.len() {
        let stationary = i < trace.points.len() && speeds[i] < v_thresh_mps;
        match (run_start, stationary) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                push_interval(trace, s, i, min_dwell_s, &mut intervals);
                run_start = None;
            }
            _ => {}
        }
    }
    intervals
}

fn push_interval(
    trace: &Trace,
    start: usize,
    end: usize,
    min_dwell_s: f64,
    out: &mut Vec<StopInterval>,
) {
    let pts = &trace.points[start..end];
    let dwell = (pts[pts.len() - 1].t_ms - pts[0].t_ms) as f64 / 1000.0;
    if dwell < min_dwell_s {
        return;
    }
    let n = pts.len() as f64;
    let centroid = GeoCoord {
        lat: pts.iter().map(|p| p.coord.lat).sum::<f64>() / n,
        lon: pts.iter().map(|p| p.coord.lon).sum::<f64>() / n,
    };
    out.push(StopInterval {
        device_id: trace.device_id.clone(),
        t_start_ms: pts[0].t_ms,
        t_end_ms: pts[pts.len() - 1].t_ms,
        centroid,
        coords: pts.iter().map(|p| p.coord).collect(),
        has_board_event: pts.iter().any(|p| p.event.is_some()),
    });
}

/// Axis-aligned MBR of a cluster's points and the haversine length of its
/// longer side. Degenerate (single distinct point) clusters report zero
/// length and are flagged.
pub fn estimate_platform(points: &[GeoCoord], earth: EarthModel) -> ([[f64; 2]; 4], f64, bool) {
    let bounds = LatLonBounds::from_coords(points.iter()).expect("non-empty cluster");
    let degenerate = points.iter().all(|p| *p == points[0]);
    let lat_side = haversine_distance(
        GeoCoord { lat: bounds.min_lat, lon: bounds.min_lon },
        GeoCoord { lat: bounds.max_lat, lon: bounds.min_lon },
        earth,
    );
    let lon_side = haversine_distance(
        GeoCoord { lat: bounds.min_lat, lon: bounds.min_lon },
        GeoCoord { lat: bounds.min_lat, lon: bounds.max_lon },
        earth,
    );
    (corners(bounds), lat_side.max(lon_side), degenerate)
}

/// Per-cluster features feeding the station/light rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopFeatures {
    pub visit_count: usize,
    pub traces_passing: usize,
    pub median_dwell_s: f64,
    pub board_evidence: bool,
}

/// Transparent two-threshold rule with a boarding-evidence override:
/// boarding annotations inside the cluster make it a station outright;
/// otherwise it must be visited by at least `f_min` of passing traces AND
/// dwell at least `t_min` at the median. Clusters with fewer than
/// `min_visits` visits are low-confidence traffic lights.
pub fn classify_stop(features: &StopFeatures, config: &StationConfig) -> (StopKind, bool) {
    if features.board_evidence {
        return (StopKind::Station, false);
    }
    if features.visit_count < config.min_visits {
        return (StopKind::TrafficLight, true);
    }
    let ratio = if features.traces_passing == 0 {
        0.0
    } else {
        features.visit_count as f64 / features.traces_passing as f64
    };
    if ratio >= config.f_min && features.median_dwell_s >= config.t_min_dwell_s {
        (StopKind::Station, false)
    } else {
        (StopKind::TrafficLight, false)
    }
}

/// Output of a detection run over a batch of cleaned traces.
#[derive(Debug, Clone)]
pub struct StationDetection {
    pub places: Vec<StopPlace>,
    pub intervals: Vec<StopInterval>,
    /// Index into `places` for each interval, when its points landed in a
    /// cluster.
    pub interval_place: Vec<Option<usize>>,
    pub features: Vec<StopFeatures>,
}

/// Detect stop intervals in every trace, cluster the stationary points,
/// and classify each cluster.
pub fn discover_stop_places(
    traces: &[Trace],
    config: &StationConfig,
    earth: EarthModel,
) -> StationDetection {
    config.cluster.validate().expect("valid cluster params");

    let mut intervals = Vec::new();
    for trace in traces {
        intervals.extend(detect_stationary(trace, config.v_thresh_mps, config.min_dwell_s, earth));
    }

    let mut coords = Vec::new();
    let mut owner = Vec::new();
    for (i, interval) in intervals.iter().enumerate() {
        coords.extend(interval.coords.iter().copied());
        owner.extend(std::iter::repeat_n(i, interval.coords.len()));
    }

    let clustering = cluster::dbscan(
        &coords,
        config.cluster.minpts,
        config.cluster.eps_deg,
        Metric::DegreeEuclidean,
        earth,
    );

    // Majority vote assigns each interval to one cluster.
    let mut votes: Vec<BTreeMap<i32, usize>> = vec![BTreeMap::new(); intervals.len()];
    for (idx, &label) in clustering.labels.iter().enumerate() {
        if label >= 0 {
            *votes[owner[idx]].entry(label).or_insert(0) += 1;
        }
    }
    let interval_cluster: Vec<Option<i32>> = votes
        .iter()
        .zip(&intervals)
        .map(|(v, interval)| {
            v.iter()
                .max_by_key(|&(label, count)| (*count, std::cmp::Reverse(*label)))
                .filter(|&(_, &count)| 2 * count > interval.coords.len())
                .map(|(&label, _)| label)
        })
        .collect();

    // Geometry + features per cluster, ids assigned west to east.
    let n_clusters = clustering.cluster_count();
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&a, &b| {
        let ca = clustering.centroids[a];
        let cb = clustering.centroids[b];
        (ca.lon, ca.lat).partial_cmp(&(cb.lon, cb.lat)).unwrap()
    });
    let mut cluster_to_place = vec![usize::MAX; n_clusters];
    for (place_idx, &cluster_idx) in order.iter().enumerate() {
        cluster_to_place[cluster_idx] = place_idx;
    }

    let mut member_coords: Vec<Vec<GeoCoord>> = vec![Vec::new(); n_clusters];
    for (idx, &label) in clustering.labels.iter().enumerate() {
        if label >= 0 {
            member_coords[label as usize].push(coords[idx]);
        }
    }

    // Any boarding annotation inside a cluster MBR is station evidence.
    let board_points: Vec<GeoCoord> = traces
        .iter()
        .flat_map(|t| t.points.iter().filter(|p| p.event.is_some()).map(|p| p.coord))
        .collect();

    let mut places = Vec::with_capacity(n_clusters);
    let mut features_out = Vec::with_capacity(n_clusters);
    for (place_idx, &cluster_idx) in order.iter().enumerate() {
        let members = &member_coords[cluster_idx];
        let centroid = clustering.centroids[cluster_idx];
        let (mbr, length_m, degenerate) = estimate_platform(members, earth);
        let bounds = LatLonBounds {
            min_lat: mbr[0][0],
            min_lon: mbr[0][1],
            max_lat: mbr[2][0],
            max_lon: mbr[2][1],
        };

        let assigned: Vec<&StopInterval> = intervals
            .iter()
            .zip(&interval_cluster)
            .filter(|(_, c)| **c == Some(cluster_idx as i32))
            .map(|(i, _)| i)
            .collect();
        let dwells: Vec<f64> = assigned.iter().map(|i| i.dwell_s()).collect();
        let median_dwell_s = if dwells.is_empty() { 0.0 } else { median_lower(&dwells) };

        let mut passing: HashSet<&str> = HashSet::new();
        for trace in traces {
            if trace
                .points
                .iter()
                .any(|p| haversine_distance(p.coord, centroid, earth) <= config.pass_radius_m)
            {
                passing.insert(trace.device_id.as_str());
            }
        }

        let board_evidence = assigned.iter().any(|i| i.has_board_event)
            || board_points.iter().any(|&c| bounds.contains(c));

        let features = StopFeatures {
            visit_count: assigned.len(),
            traces_passing: passing.len(),
            median_dwell_s,
            board_evidence,
        };
        let (kind, low_confidence) = classify_stop(&features, config);

        places.push(StopPlace {
            id: format!("stop-{:03}", place_idx + 1),
            kind,
            lat: centroid.lat,
            lon: centroid.lon,
            mbr,
            platform_length_m: if kind == StopKind::Station { Some(length_m) } else { None },
            visit_count: features.visit_count,
            median_dwell_s,
            low_confidence,
            degenerate,
            version: 1,
        });
        features_out.push(features);
    }

    let interval_place = interval_cluster
        .iter()
        .map(|c| c.map(|label| cluster_to_place[label as usize]))
        .collect();

    StationDetection { places, intervals, interval_place, features: features_out }
}

/// A stop interval identified as a tram queued behind another, waiting to
/// enter `station_id`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferingInterval {
    pub interval_index: usize,
    pub station_id: String,
}

fn distance_to_bounds(c: GeoCoord, b: LatLonBounds, earth: EarthModel) -> f64 {
    let clamped = GeoCoord {
        lat: c.lat.clamp(b.min_lat, b.max_lat),
        lon: c.lon.clamp(b.min_lon, b.max_lon),
    };
    haversine_distance(c, clamped, earth)
}

/// Label stop intervals that sit just upstream of a station they are about
/// to enter. An interval inside any station MBR is never buffering; one
/// whose trace has no later station stop stays unlabeled (its direction
/// of approach is unknown).
pub fn detect_buffering(
    intervals: &[StopInterval],
    db: &StationsDb,
    upstream_m: f64,
    earth: EarthModel,
) -> Vec<BufferingInterval> {
    let stations: Vec<&StopPlace> =
        db.places.iter().filter(|p| p.kind == StopKind::Station).collect();
    let mut out = Vec::new();
    for (idx, interval) in intervals.iter().enumerate() {
        if stations.iter().any(|s| s.contains(interval.centroid)) {
            continue;
        }
        // the same trace's next stop that is inside a station
        let next_station = intervals
            .iter()
            .filter(|other| {
                other.device_id == interval.device_id && other.t_start_ms > interval.t_end_ms
            })
            .min_by_key(|other| other.t_start_ms)
            .and_then(|other| stations.iter().find(|s| s.contains(other.centroid)));
        if let Some(station) = next_station {
            if distance_to_bounds(interval.centroid, station.bounds(), earth) <= upstream_m {
                out.push(BufferingInterval { interval_index: idx, station_id: station.id.clone() });
            }
        }
    }
    out
}

/// Persistent collection of stop places, stored as a JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationsDb {
    pub places: Vec<StopPlace>,
}

impl StationsDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_places(places: Vec<StopPlace>) -> Result<Self> {
        let mut ids = HashSet::new();
        for p in &places {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::StationsDb(format!("duplicate id {}", p.id)));
            }
        }
        Ok(StationsDb { places })
    }

    pub fn get(&self, id: &str) -> Option<&StopPlace> {
        self.places.iter().find(|p| p.id == id)
    }

    pub fn stations(&self) -> impl Iterator<Item = &StopPlace> {
        self.places.iter().filter(|p| p.kind == StopKind::Station)
    }

    /// Merge one detection: a new place whose centroid falls within
    /// `dt_deg` (degree distance) of an existing one updates that record's
    /// geometry and stats and bumps its version; anything else inserts
    /// under a fresh id.
    pub fn upsert(&mut self, place: &StopPlace, dt_deg: f64) {
        let nearest = self
            .places
            .iter_mut()
            .map(|p| {
                let d_lat = p.lat - place.lat;
                let d_lon = p.lon - place.lon;
                ((d_lat * d_lat + d_lon * d_lon).sqrt(), p)
            })
            .filter(|(d, _)| *d <= dt_deg)
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        match nearest {
            Some((_, existing)) => {
                let id = existing.id.clone();
                let version = existing.version + 1;
                *existing = place.clone();
                existing.id = id;
                existing.version = version;
            }
            None => {
                let mut fresh = place.clone();
                if self.places.iter().any(|p| p.id == fresh.id) {
                    fresh.id = format!("stop-{:03}", self.places.len() + 1);
                }
                self.places.push(fresh);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("db serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Load fails loudly on corrupt files; it never yields partial state.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let db: StationsDb = serde_json::from_str(&json)
            .map_err(|e| Error::StationsDb(format!("{}: {e}", path.display())))?;
        Self::from_places(db.places)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{BoardEvent, GpsPoint};

    const EARTH: EarthModel = EarthModel { radius_km: 6373.0 };

    fn gps(t_ms: i64, lat: f64, lon: f64, speed: f64) -> GpsPoint {
        GpsPoint {
            device_id: "d".into(),
            t_ms,
            coord: GeoCoord { lat, lon },
            speed: Some(speed),
            event: None,
        }
    }

    #[test]
    fn constant_motion_yields_no_intervals() {
        let trace = Trace {
            device_id: "d".into(),
            points: (0..60).map(|i| gps(1000 * (i + 1), 31.2, 29.9 + i as f64 * 1e-4, 10.0)).collect(),
        };
        assert!(detect_stationary(&trace, 0.5, 8.0, EARTH).is_empty());
    }

    #[test]
    fn bounded_dwell_becomes_one_interval() {
        let mut points = Vec::new();
        for i in 0..10i64 {
            points.push(gps(1000 * (i + 1), 31.2, 29.89 + i as f64 * 1e-4, 8.0));
        }
        for i in 0..61i64 {
            points.push(gps(11_000 + 1000 * i, 31.2, 29.9, 0.0));
        }
        for i in 0..10i64 {
            points.push(gps(73_000 + 1000 * i, 31.2, 29.91 + i as f64 * 1e-4, 8.0));
        }
        let trace = Trace { device_id: "d".into(), points };
        let intervals = detect_stationary(&trace, 0.5, 10.0, EARTH);
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].dwell_s() - 60.0).abs() < 1e-9);
        assert!((intervals[0].centroid.lon - 29.9).abs() < 1e-12);
    }

    #[test]
    fn speed_is_derived_when_missing() {
        let mut points = Vec::new();
        // moving: ~11 m between fixes at 1 Hz
        for i in 0..10i64 {
            points.push(GpsPoint {
                device_id: "d".into(),
                t_ms: 1000 * (i + 1),
                coord: GeoCoord { lat: 31.2, lon: 29.89 + i as f64 * 1e-4 },
                speed: None,
                event: None,
            });
        }
        // stationary for 30 s
        for i in 0..31i64 {
            points.push(GpsPoint {
                device_id: "d".into(),
                t_ms: 11_000 + 1000 * i,
                coord: GeoCoord { lat: 31.2, lon: 29.891 },
                speed: None,
                event: None,
            });
        }
        let trace = Trace { device_id: "d".into(), points };
        let intervals = detect_stationary(&trace, 0.5, 8.0, EARTH);
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].dwell_s() - 30.0).abs() < 1.5);
    }

    #[test]
    fn platform_of_a_rectangle_is_its_longer_side() {
        // 100 m x 5 m rectangle of points at lat 31.2, long side east-west
        let m_per_deg = EARTH.meters_per_degree();
        let lon_scale = (31.2f64).to_radians().cos();
        let mut points = Vec::new();
        for i in 0..=50 {
            for j in 0..=2 {
                points.push(GeoCoord {
                    lat: 31.2 + (j as f64 * 2.5) / m_per_deg,
                    lon: 29.9 + (i as f64 * 2.0) / (m_per_deg * lon_scale),
                });
            }
        }
        let (mbr, length, degenerate) = estimate_platform(&points, EARTH);
        assert!(!degenerate);
        assert!((95.0..=105.0).contains(&length), "got {length}");
        // recompute the longer side from the returned corners
        let side = haversine_distance(
            GeoCoord { lat: mbr[0][0], lon: mbr[0][1] },
            GeoCoord { lat: mbr[1][0], lon: mbr[1][1] },
            EARTH,
        );
        assert!((side - length).abs() < 1e-9);
    }

    #[test]
    fn identical_points_are_degenerate_zero_length() {
        let points = vec![GeoCoord { lat: 31.2, lon: 29.9 }; 5];
        let (_, length, degenerate) = estimate_platform(&points, EARTH);
        assert_eq!(length, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn board_evidence_overrides_dwell() {
        let features = StopFeatures {
            visit_count: 5,
            traces_passing: 10,
            median_dwell_s: 3.0,
            board_evidence: true,
        };
        let (kind, low) = classify_stop(&features, &StationConfig::default());
        assert_eq!(kind, StopKind::Station);
        assert!(!low);
    }

    #[test]
    fn both_thresholds_met_is_a_station() {
        let features = StopFeatures {
            visit_count: 9,
            traces_passing: 10,
            median_dwell_s: 40.0,
            board_evidence: false,
        };
        assert_eq!(classify_stop(&features, &StationConfig::default()).0, StopKind::Station);
    }

    #[test]
    fn sparse_clusters_are_low_confidence_lights() {
        let features = StopFeatures {
            visit_count: 2,
            traces_passing: 10,
            median_dwell_s: 100.0,
            board_evidence: false,
        };
        let (kind, low) = classify_stop(&features, &StationConfig::default());
        assert_eq!(kind, StopKind::TrafficLight);
        assert!(low);
    }

    #[test]
    fn short_dwell_is_a_light() {
        let features = StopFeatures {
            visit_count: 10,
            traces_passing: 10,
            median_dwell_s: 12.0,
            board_evidence: false,
        };
        assert_eq!(classify_stop(&features, &StationConfig::default()).0, StopKind::TrafficLight);
    }

    fn dwell_trace(device: &str, stops: &[(f64, f64, i64)], with_board: bool) -> Trace {
        // Rides west->east along lat 31.2, stopping at each (lat, lon).
        let mut points = Vec::new();
        let mut t = 1000i64;
        let mut lon = 29.88;
        for (k, &(slat, slon, dwell_s)) in stops.iter().enumerate() {
            while lon < slon {
                points.push(GpsPoint {
                    device_id: device.into(),
                    t_ms: t,
                    coord: GeoCoord { lat: 31.2, lon },
                    speed: Some(8.0),
                    event: None,
                });
                t += 1000;
                lon += 8.0 / (EARTH.meters_per_degree() * 0.855);
            }
            for i in 0..dwell_s {
                points.push(GpsPoint {
                    device_id: device.into(),
                    t_ms: t,
                    coord: GeoCoord { lat: slat, lon: slon },
                    speed: Some(0.0),
                    event: if with_board && k == 0 && i == 2 { Some(BoardEvent::Board) } else { None },
                });
                t += 1000;
            }
        }
        Trace { device_id: device.into(), points }
    }

    #[test]
    fn discovery_separates_stations_from_lights() {
        // 6 traces stop 40 s at two "stations" and 12 s at a "light"
        let stops = [(31.2, 29.9, 40i64), (31.2, 29.905, 12), (31.2, 29.91, 40)];
        let traces: Vec<Trace> =
            (0..6).map(|i| dwell_trace(&format!("d{i}"), &stops, false)).collect();
        let config = StationConfig {
            cluster: ClusterParams { minpts: 50, eps_deg: 0.0002, dt_deg: 0.0003 },
            ..Default::default()
        };
        let detection = discover_stop_places(&traces, &config, EARTH);
        assert_eq!(detection.places.len(), 3);
        let kinds: Vec<StopKind> = detection.places.iter().map(|p| p.kind).collect();
        assert_eq!(kinds, vec![StopKind::Station, StopKind::TrafficLight, StopKind::Station]);
        // every interval near a place got assigned
        assert!(detection.interval_place.iter().filter(|p| p.is_some()).count() >= 15);

        // platform length always re-derives from the longer MBR side, and
        // no two places share an MBR
        for p in &detection.places {
            let b = p.bounds();
            let lat_side = haversine_distance(
                GeoCoord { lat: b.min_lat, lon: b.min_lon },
                GeoCoord { lat: b.max_lat, lon: b.min_lon },
                EARTH,
            );
            let lon_side = haversine_distance(
                GeoCoord { lat: b.min_lat, lon: b.min_lon },
                GeoCoord { lat: b.min_lat, lon: b.max_lon },
                EARTH,
            );
            if let Some(len) = p.platform_length_m {
                assert!((len - lat_side.max(lon_side)).abs() < 1e-9);
            }
        }
        for (i, a) in detection.places.iter().enumerate() {
            for b in &detection.places[i + 1..] {
                assert_ne!(a.mbr, b.mbr);
            }
        }

        // a trace's intervals stay inside its time range and are disjoint
        for trace in &traces {
            let ivs: Vec<&StopInterval> = detection
                .intervals
                .iter()
                .filter(|i| i.device_id == trace.device_id)
                .collect();
            let (t0, t1) = trace.time_span_ms().unwrap();
            for iv in &ivs {
                assert!(iv.t_start_ms >= t0 && iv.t_end_ms <= t1);
            }
            for w in ivs.windows(2) {
                assert!(w[0].t_end_ms < w[1].t_start_ms);
            }
        }
    }

    #[test]
    fn board_annotation_rescues_a_short_dwell_station() {
        let stops = [(31.2, 29.9, 12i64), (31.2, 29.91, 40)];
        let traces: Vec<Trace> =
            (0..6).map(|i| dwell_trace(&format!("d{i}"), &stops, true)).collect();
        let config = StationConfig {
            cluster: ClusterParams { minpts: 30, eps_deg: 0.0002, dt_deg: 0.0003 },
            ..Default::default()
        };
        let detection = discover_stop_places(&traces, &config, EARTH);
        assert_eq!(detection.places[0].kind, StopKind::Station);
    }

    #[test]
    fn buffering_is_outside_mbr_next_stop_inside() {
        let station = StopPlace {
            id: "stop-001".into(),
            kind: StopKind::Station,
            lat: 31.2,
            lon: 29.9,
            mbr: [
                [31.19995, 29.8996],
                [31.19995, 29.9004],
                [31.20005, 29.9004],
                [31.20005, 29.8996],
            ],
            platform_length_m: Some(76.0),
            visit_count: 10,
            median_dwell_s: 40.0,
            low_confidence: false,
            degenerate: false,
            version: 1,
        };
        let db = StationsDb::from_places(vec![station]).unwrap();
        let lon_50m_west = 29.8996 - 50.0 / (EARTH.meters_per_degree() * 0.855);
        let intervals = vec![
            StopInterval {
                device_id: "d".into(),
                t_start_ms: 1000,
                t_end_ms: 26_000,
                centroid: GeoCoord { lat: 31.2, lon: lon_50m_west },
                coords: vec![GeoCoord { lat: 31.2, lon: lon_50m_west }],
                has_board_event: false,
            },
            StopInterval {
                device_id: "d".into(),
                t_start_ms: 40_000,
                t_end_ms: 80_000,
                centroid: GeoCoord { lat: 31.2, lon: 29.9 },
                coords: vec![GeoCoord { lat: 31.2, lon: 29.9 }],
                has_board_event: false,
            },
        ];
        let buffering = detect_buffering(&intervals, &db, 150.0, EARTH);
        assert_eq!(buffering.len(), 1);
        assert_eq!(buffering[0].interval_index, 0);
        assert_eq!(buffering[0].station_id, "stop-001");

        // an interval inside the MBR is never buffering
        let inside_only = vec![intervals[1].clone()];
        assert!(detect_buffering(&inside_only, &db, 150.0, EARTH).is_empty());
    }

    #[test]
    fn db_round_trips_and_upserts() {
        let place = StopPlace {
            id: "stop-001".into(),
            kind: StopKind::Station,
            lat: 31.2,
            lon: 29.9,
            mbr: [[31.1999, 29.8996], [31.1999, 29.9004], [31.2001, 29.9004], [31.2001, 29.8996]],
            platform_length_m: Some(76.0),
            visit_count: 10,
            median_dwell_s: 40.0,
            low_confidence: false,
            degenerate: false,
            version: 1,
        };
        let mut db = StationsDb::from_places(vec![place.clone()]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stations.json");
        db.save(&path).unwrap();
        let loaded = StationsDb::load(&path).unwrap();
        assert_eq!(loaded, db);

        // near-coincident detection updates in place
        let mut near = place.clone();
        near.id = "other".into();
        near.lat += 0.0001;
        near.platform_length_m = Some(80.0);
        db.upsert(&near, 0.0003);
        assert_eq!(db.places.len(), 1);
        assert_eq!(db.places[0].id, "stop-001");
        assert_eq!(db.places[0].version, 2);
        assert_eq!(db.places[0].platform_length_m, Some(80.0));

        // far detection inserts
        let mut far = place.clone();
        far.id = "stop-900".into();
        far.lon += 0.01;
        db.upsert(&far, 0.0003);
        assert_eq!(db.places.len(), 2);
    }

    #[test]
    fn corrupt_db_file_fails_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(StationsDb::load(&path).is_err());
    }
}
