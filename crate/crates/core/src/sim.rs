//! Synthetic tram network and trace generator with full ground truth.
//!
//! The generator exists because pipeline quality claims (station recall,
//! platform error, ETA coverage) are only checkable against a network
//! whose geometry and timing process are known exactly. Trams traverse
//! two lines sharing a trunk with one split area; every element's delay
//! is drawn from a configured zero-truncated normal; riders emit GPS at a
//! fixed rate with a configurable noise profile and board/alight
//! annotations.
//!
//! Geometry: the route is a chain of flat (east-west) zones, one per stop
//! place, joined by inclined connectors. Platforms therefore lie along
//! the longitude axis wherever trams dwell, while the route as a whole
//! still drifts north and the two branches diverge for line
//! identification.
//!
//! Everything is deterministic per seed: one sequential RNG stream drives
//! a run, so equal configs give byte-identical outputs. Multiple seeds
//! fan out in parallel.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::geo::{EarthModel, GeoCoord, LocalProjection};
use crate::network::{LatLonBounds, Line, SplitArea, TransitNetwork};
use crate::stations::StopKind;
use crate::timing::DelayKind;
use crate::trace::{BoardEvent, GpsPoint, Trace};
use crate::{Error, Result};

/// Normal(mu, sigma) delay generator, truncated at zero by resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayGen {
    pub mu_s: f64,
    pub sigma_s: f64,
}

impl DelayGen {
    pub fn new(mu_s: f64, sigma_s: f64) -> Self {
        DelayGen { mu_s, sigma_s }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sigma_s == 0.0 {
            return self.mu_s.max(0.0);
        }
        let normal = Normal::new(self.mu_s, self.sigma_s).expect("valid generator");
        loop {
            let x = normal.sample(rng);
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// One stop place along a route, placed by arc position from the path
/// start. `edge_to_next` generates the travel time to the following place
/// on the same route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPlaceSpec {
    pub id: String,
    pub kind: StopKind,
    pub arc_m: f64,
    /// Station platform length; lights use a nominal small extent.
    pub platform_m: f64,
    pub dwell: DelayGen,
    pub edge_to_next: Option<DelayGen>,
}

/// A branch taken after the split: its connector heading (degrees north
/// of east) and its places with arc positions measured along the full
/// path (trunk + branch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBranchSpec {
    pub line_id: String,
    pub connector_heading_deg: f64,
    /// Travel time from the last trunk place to the branch's first place.
    pub edge_from_trunk: DelayGen,
    pub places: Vec<SimPlaceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    pub jitter_sigma_m: f64,
    pub glitch_prob: f64,
    pub glitch_jump_m: f64,
    pub multipath_burst_prob: f64,
    pub duplicate_prob: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            jitter_sigma_m: 1.25,
            glitch_prob: 0.005,
            glitch_jump_m: 20_000.0,
            multipath_burst_prob: 0.003,
            duplicate_prob: 0.004,
        }
    }
}

impl NoiseProfile {
    pub fn none() -> Self {
        NoiseProfile {
            jitter_sigma_m: 0.0,
            glitch_prob: 0.0,
            glitch_jump_m: 0.0,
            multipath_burst_prob: 0.0,
            duplicate_prob: 0.0,
        }
    }
}

/// Optional tram queueing: with the given probability a tram arriving at
/// a station first waits at `offset_m` before the platform zone, then
/// covers the remainder in `approach_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferingSpec {
    pub prob: f64,
    pub gen: DelayGen,
    pub offset_m: f64,
    pub approach_s: f64,
}

impl Default for BufferingSpec {
    fn default() -> Self {
        BufferingSpec { prob: 0.5, gen: DelayGen::new(25.0, 8.0), offset_m: 60.0, approach_s: 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Heading of trunk connectors, degrees north of east. Station zones
    /// themselves are flat (due east).
    pub trunk_connector_heading_deg: f64,
    /// Flat zone extends this far beyond each platform end.
    pub flat_margin_m: f64,
    pub tram_length_m: f64,
    pub trunk: Vec<SimPlaceSpec>,
    /// Path arc where the branches take over from the trunk.
    pub split_arc_m: f64,
    pub branches: Vec<SimBranchSpec>,
    /// Full-line rider trips to emit (alternating line and direction).
    pub rider_trips: usize,
    pub headway_s: f64,
    pub sample_hz: f64,
    pub noise: NoiseProfile,
    pub buffering: Option<BufferingSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        // 12 stations + 5 lights on two lines sharing a trunk; station
        // spacing 300-800 m.
        let st = |id: &str, arc: f64, platform: f64, mu: f64, gap: Option<f64>| SimPlaceSpec {
            id: id.into(),
            kind: StopKind::Station,
            arc_m: arc,
            platform_m: platform,
            dwell: DelayGen::new(mu, mu / 4.0),
            edge_to_next: gap.map(edge_gen),
        };
        let light = |id: &str, arc: f64, mu: f64, gap: Option<f64>| SimPlaceSpec {
            id: id.into(),
            kind: StopKind::TrafficLight,
            arc_m: arc,
            platform_m: 6.0,
            dwell: DelayGen::new(mu, 4.0),
            edge_to_next: gap.map(edge_gen),
        };
        SimConfig {
            seed: 1,
            origin_lat: 31.19,
            origin_lon: 29.90,
            trunk_connector_heading_deg: 18.0,
            flat_margin_m: 30.0,
            tram_length_m: 25.0,
            trunk: vec![
                st("s01", 40.0, 60.0, 38.0, Some(450.0)),
                st("s02", 490.0, 55.0, 45.0, Some(250.0)),
                light("l01", 740.0, 14.0, Some(250.0)),
                st("s03", 990.0, 70.0, 52.0, Some(550.0)),
                st("s04", 1540.0, 65.0, 36.0, Some(300.0)),
                light("l02", 1840.0, 16.0, Some(300.0)),
                st("s05", 2140.0, 75.0, 58.0, Some(600.0)),
                st("s06", 2740.0, 80.0, 42.0, Some(300.0)),
                light("l03", 3040.0, 15.0, Some(350.0)),
                st("s07", 3390.0, 58.0, 44.0, Some(650.0)),
                st("s08", 4040.0, 72.0, 48.0, None),
            ],
            split_arc_m: 4240.0,
            branches: vec![
                SimBranchSpec {
                    line_id: "line-1".into(),
                    connector_heading_deg: 36.0,
                    edge_from_trunk: edge_gen(500.0),
                    places: vec![
                        light("l04", 4540.0, 13.0, Some(300.0)),
                        st("s09", 4840.0, 65.0, 40.0, Some(600.0)),
                        st("s10", 5440.0, 82.0, 35.0, None),
                    ],
                },
                SimBranchSpec {
                    line_id: "line-2".into(),
                    connector_heading_deg: -14.0,
                    edge_from_trunk: edge_gen(480.0),
                    places: vec![
                        light("l05", 4520.0, 17.0, Some(300.0)),
                        st("s11", 4820.0, 84.0, 46.0, Some(600.0)),
                        st("s12", 5420.0, 50.0, 37.0, None),
                    ],
                },
            ],
            rider_trips: 96,
            headway_s: 90.0,
            sample_hz: 1.0,
            noise: NoiseProfile::default(),
            buffering: None,
        }
    }
}

fn edge_gen(gap_m: f64) -> DelayGen {
    let mu = 8.0 + gap_m / 7.5;
    DelayGen::new(mu, 0.10 * mu + 1.0)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::NetworkSpec(m));
        if self.trunk.is_empty() || self.branches.len() != 2 {
            return err("need a trunk and exactly 2 branches".into());
        }
        if self.sample_hz <= 0.0 || self.headway_s <= 0.0 {
            return err("sample_hz and headway_s must be positive".into());
        }
        let mut prev = f64::NEG_INFINITY;
        let mut ids = std::collections::HashSet::new();
        for p in self.trunk.iter().chain(self.branches.iter().flat_map(|b| &b.places)) {
            if !ids.insert(p.id.clone()) {
                return err(format!("duplicate place id {}", p.id));
            }
            if p.platform_m <= 0.0 || p.dwell.sigma_s < 0.0 {
                return err(format!("place {} has invalid platform or generator", p.id));
            }
        }
        for p in &self.trunk {
            if p.arc_m <= prev {
                return err(format!("trunk arcs must increase at {}", p.id));
            }
            prev = p.arc_m;
        }
        if self.split_arc_m <= prev {
            return err("split must lie beyond the last trunk place".into());
        }
        for b in &self.branches {
            let mut prev = self.split_arc_m;
            for p in &b.places {
                if p.arc_m <= prev {
                    return err(format!("branch {} arcs must increase at {}", b.line_id, p.id));
                }
                prev = p.arc_m;
            }
            if b.places.is_empty() {
                return err(format!("branch {} has no places", b.line_id));
            }
        }
        let probs = [
            self.noise.glitch_prob,
            self.noise.multipath_burst_prob,
            self.noise.duplicate_prob,
            self.buffering.map(|b| b.prob).unwrap_or(0.0),
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("probabilities must lie in [0, 1]".into());
        }
        if self.noise.jitter_sigma_m < 0.0 || self.noise.glitch_jump_m < 0.0 {
            return err("noise magnitudes must be >= 0".into());
        }
        Ok(())
    }
}

/// True generator for one element, as stored in ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGenerator {
    pub kind: DelayKind,
    pub element_ref: String,
    pub mu_s: f64,
    pub sigma_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPlace {
    pub id: String,
    pub kind: StopKind,
    pub lat: f64,
    pub lon: f64,
    pub platform_length_m: f64,
    pub mbr: [[f64; 2]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripEvent {
    pub kind: DelayKind,
    pub element_ref: String,
    pub t_start_ms: i64,
    pub t_end_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLog {
    pub trip_id: usize,
    pub device_id: Option<String>,
    pub line_id: String,
    /// true = west to east (forward place order).
    pub forward: bool,
    pub events: Vec<TripEvent>,
    /// Platform arrival time per visited place, in travel order.
    pub arrivals: Vec<(String, i64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub total_points: usize,
    pub glitch_points: usize,
    pub multipath_points: usize,
    pub duplicate_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub places: Vec<TruthPlace>,
    pub generators: Vec<TruthGenerator>,
    pub trips: Vec<TripLog>,
    pub noise: NoiseStats,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("truth serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&json).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn generator(&self, kind: DelayKind, element_ref: &str) -> Option<&TruthGenerator> {
        self.generators.iter().find(|g| g.kind == kind && g.element_ref == element_ref)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub traces: Vec<Trace>,
    pub truth: GroundTruth,
    pub network: TransitNetwork,
}

// One straight piece of a route path in planar meters.
#[derive(Debug, Clone, Copy)]
struct PathPiece {
    arc0: f64,
    arc1: f64,
    x0: f64,
    y0: f64,
    heading_rad: f64,
}

#[derive(Debug, Clone)]
struct RoutePath {
    pieces: Vec<PathPiece>,
}

impl RoutePath {
    fn xy_at(&self, arc: f64) -> (f64, f64) {
        let piece = self.piece_at(arc);
        let d = (arc - piece.arc0).max(0.0);
        (piece.x0 + d * piece.heading_rad.cos(), piece.y0 + d * piece.heading_rad.sin())
    }

    fn heading_at(&self, arc: f64) -> f64 {
        self.piece_at(arc).heading_rad
    }

    fn piece_at(&self, arc: f64) -> &PathPiece {
        self.pieces
            .iter()
            .find(|p| arc <= p.arc1)
            .unwrap_or_else(|| self.pieces.last().expect("non-empty path"))
    }
}

#[derive(Debug, Clone)]
struct RoutePlace {
    id: String,
    kind: StopKind,
    arc_m: f64,
    platform_m: f64,
    dwell: DelayGen,
}

#[derive(Debug, Clone)]
struct Route {
    line_id: String,
    places: Vec<RoutePlace>,
    /// Travel-time generator between consecutive places.
    edges: Vec<DelayGen>,
    path: RoutePath,
    polyline: Vec<GeoCoord>,
}

struct Compiled {
    routes: Vec<Route>,
    proj: LocalProjection,
    places: Vec<TruthPlace>,
    generators: Vec<TruthGenerator>,
    split_region: LatLonBounds,
}

fn compile(config: &SimConfig, earth: EarthModel) -> Result<Compiled> {
    config.validate()?;
    let origin = GeoCoord::new(config.origin_lat, config.origin_lon)?;
    let proj = LocalProjection::new(origin, earth);

    let mut routes = Vec::new();
    for branch in &config.branches {
        // Full ordered place list and edge generators for this line.
        let mut places: Vec<RoutePlace> = Vec::new();
        let mut edges: Vec<DelayGen> = Vec::new();
        for (i, p) in config.trunk.iter().enumerate() {
            places.push(RoutePlace {
                id: p.id.clone(),
                kind: p.kind,
                arc_m: p.arc_m,
                platform_m: p.platform_m,
                dwell: p.dwell,
            });
            if i + 1 < config.trunk.len() {
                edges.push(p.edge_to_next.ok_or_else(|| {
                    Error::NetworkSpec(format!("trunk place {} missing edge generator", p.id))
                })?);
            }
        }
        edges.push(branch.edge_from_trunk);
        for (i, p) in branch.places.iter().enumerate() {
            places.push(RoutePlace {
                id: p.id.clone(),
                kind: p.kind,
                arc_m: p.arc_m,
                platform_m: p.platform_m,
                dwell: p.dwell,
            });
            if i + 1 < branch.places.len() {
                edges.push(p.edge_to_next.ok_or_else(|| {
                    Error::NetworkSpec(format!("branch place {} missing edge generator", p.id))
                })?);
            }
        }

        // Flat zone per place, connectors at the route heading between.
        let half = |p: &RoutePlace| p.platform_m / 2.0 + config.flat_margin_m;
        let mut boundaries: Vec<(f64, f64)> = Vec::new(); // flat (start, end)
        for p in &places {
            boundaries.push((p.arc_m - half(p), p.arc_m + half(p)));
        }
        for w in boundaries.windows(2) {
            if w[0].1 >= w[1].0 {
                return Err(Error::NetworkSpec(format!(
                    "flat zones overlap between arcs {:.0} and {:.0}; increase spacing",
                    w[0].1, w[1].0
                )));
            }
        }

        let end_arc = boundaries.last().unwrap().1;
        let trunk_rad = config.trunk_connector_heading_deg.to_radians();
        let branch_rad = branch.connector_heading_deg.to_radians();
        let mut marks: Vec<f64> = vec![0.0];
        for &(s, e) in &boundaries {
            marks.push(s.max(0.0));
            marks.push(e);
        }
        marks.push(config.split_arc_m);
        marks.push(end_arc);
        marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        marks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

        let mut pieces = Vec::new();
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for w in marks.windows(2) {
            let (a0, a1) = (w[0], w[1]);
            if a1 <= a0 {
                continue;
            }
            let mid = 0.5 * (a0 + a1);
            let flat = boundaries.iter().any(|&(s, e)| mid >= s && mid <= e);
            let heading = if flat {
                0.0
            } else if mid < config.split_arc_m {
                trunk_rad
            } else {
                branch_rad
            };
            pieces.push(PathPiece { arc0: a0, arc1: a1, x0: x, y0: y, heading_rad: heading });
            x += (a1 - a0) * heading.cos();
            y += (a1 - a0) * heading.sin();
        }
        let path = RoutePath { pieces };
        let polyline: Vec<GeoCoord> = path
            .pieces
            .iter()
            .map(|p| proj.to_coord(p.x0, p.y0))
            .chain(std::iter::once(proj.to_coord(x, y)))
            .collect();

        routes.push(Route { line_id: branch.line_id.clone(), places, edges, path, polyline });
    }

    // Truth places (trunk ones once), truth MBR = platform extent x 4 m.
    let mut places = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for route in &routes {
        for p in &route.places {
            if !seen.insert(p.id.clone()) {
                continue;
            }
            let (cx, cy) = route.path.xy_at(p.arc_m);
            let c = proj.to_coord(cx, cy);
            let a = proj.to_coord(cx - p.platform_m / 2.0, cy - 2.0);
            let b = proj.to_coord(cx + p.platform_m / 2.0, cy + 2.0);
            places.push(TruthPlace {
                id: p.id.clone(),
                kind: p.kind,
                lat: c.lat,
                lon: c.lon,
                platform_length_m: p.platform_m,
                mbr: [
                    [a.lat, a.lon],
                    [a.lat, b.lon],
                    [b.lat, b.lon],
                    [b.lat, a.lon],
                ],
            });
        }
    }

    // Truth generators: dwells once per place, edges per direction.
    let mut generators = Vec::new();
    let mut seen_gen = std::collections::HashSet::new();
    for route in &routes {
        for p in &route.places {
            let kind = match p.kind {
                StopKind::Station => DelayKind::StationDelay,
                StopKind::TrafficLight => DelayKind::TrafficDelay,
            };
            if seen_gen.insert(p.id.clone()) {
                generators.push(TruthGenerator {
                    kind,
                    element_ref: p.id.clone(),
                    mu_s: p.dwell.mu_s,
                    sigma_s: p.dwell.sigma_s,
                });
            }
        }
        for (i, gen) in route.edges.iter().enumerate() {
            let (a, b) = (&route.places[i], &route.places[i + 1]);
            let kind = if a.kind == StopKind::Station && b.kind == StopKind::Station {
                DelayKind::SegmentTime
            } else {
                DelayKind::LegTime
            };
            for (from, to) in [(&a.id, &b.id), (&b.id, &a.id)] {
                let key = format!("{from}/{to}");
                if seen_gen.insert(key.clone()) {
                    generators.push(TruthGenerator {
                        kind,
                        element_ref: key,
                        mu_s: gen.mu_s,
                        sigma_s: gen.sigma_s,
                    });
                }
            }
        }
    }
    if let Some(buf) = &config.buffering {
        for route in &routes {
            for p in route.places.iter().filter(|p| p.kind == StopKind::Station) {
                let key = p.id.clone();
                if seen_gen.insert(format!("bf:{key}")) {
                    generators.push(TruthGenerator {
                        kind: DelayKind::BufferingDelay,
                        element_ref: key,
                        mu_s: buf.gen.mu_s,
                        sigma_s: buf.gen.sigma_s,
                    });
                }
            }
        }
    }

    // Split region: everything within 600 m past the split on both
    // branches, padded.
    let mut region_pts = Vec::new();
    for route in &routes {
        let mut arc = config.split_arc_m - 50.0;
        while arc <= config.split_arc_m + 600.0 {
            let (x, y) = route.path.xy_at(arc);
            region_pts.push(proj.to_coord(x, y));
            arc += 50.0;
        }
    }
    let mut split_region = LatLonBounds::from_coords(region_pts.iter()).unwrap();
    let pad = 30.0 / earth.meters_per_degree();
    split_region.min_lat -= pad;
    split_region.max_lat += pad;
    split_region.min_lon -= pad;
    split_region.max_lon += pad;

    Ok(Compiled { routes, proj, places, generators, split_region })
}

/// The network description matching a config's geometry, as consumed by
/// the rest of the pipeline.
pub fn network_of(config: &SimConfig, earth: EarthModel) -> Result<TransitNetwork> {
    let compiled = compile(config, earth)?;
    Ok(network_from_compiled(&compiled))
}

fn network_from_compiled(compiled: &Compiled) -> TransitNetwork {
    TransitNetwork {
        lines: compiled
            .routes
            .iter()
            .map(|r| Line {
                id: r.line_id.clone(),
                places: r.places.iter().map(|p| p.id.clone()).collect(),
                polyline: r.polyline.clone(),
            })
            .collect(),
        split_areas: vec![SplitArea {
            region: compiled.split_region,
            lines: compiled.routes.iter().map(|r| r.line_id.clone()).collect(),
        }],
    }
}

// Piecewise-linear tram trajectory in (time, arc) space. Stationary
// pieces carry the half-width of the rider's along-track wander (phone
// drift plus position within the tram).
#[derive(Debug, Clone)]
struct Motion {
    t0: i64,
    t1: i64,
    arc0: f64,
    arc1: f64,
    wander_m: f64,
}

struct TripSchedule {
    motions: Vec<Motion>,
    log: TripLog,
}

impl TripSchedule {
    /// (arc, speed m/s, wander half-width) at time t.
    fn sample_at(&self, t: i64) -> (f64, f64, f64) {
        for m in &self.motions {
            if t <= m.t1 {
                if t <= m.t0 || m.t1 == m.t0 {
                    return (m.arc0, 0.0, m.wander_m);
                }
                let f = (t - m.t0) as f64 / (m.t1 - m.t0) as f64;
                let speed = ((m.arc1 - m.arc0).abs() / (m.t1 - m.t0) as f64) * 1000.0;
                return (m.arc0 + f * (m.arc1 - m.arc0), speed, m.wander_m);
            }
        }
        (self.motions.last().map(|m| m.arc1).unwrap_or(0.0), 0.0, 0.0)
    }

    fn span(&self) -> (i64, i64) {
        (self.log.arrivals.first().map(|a| a.1).unwrap_or(0),
         self.log.arrivals.last().map(|a| a.1).unwrap_or(0))
    }
}

fn run_trip(
    trip_id: usize,
    route: &Route,
    forward: bool,
    t0_ms: i64,
    tram_length_m: f64,
    flat_margin_m: f64,
    buffering: &Option<BufferingSpec>,
    rng: &mut ChaCha8Rng,
) -> TripSchedule {
    let n = route.places.len();
    let order: Vec<usize> = if forward { (0..n).collect() } else { (0..n).rev().collect() };
    let wander = tram_length_m / 2.0;

    let mut motions = Vec::new();
    let mut events = Vec::new();
    let mut arrivals = Vec::new();
    let mut t = t0_ms;
    let mut prev_stop_arc: Option<f64> = None;
    let mut prev_place: Option<usize> = None;

    for &pi in &order {
        let place = &route.places[pi];
        let stop_offset = match place.kind {
            StopKind::Station => {
                // tram aligns anywhere along the platform, per visit
                let half = ((place.platform_m - tram_length_m) / 2.0).max(0.0);
                rng.random_range(-half..=half)
            }
            StopKind::TrafficLight => rng.random_range(-3.0..=3.0),
        };
        let stop_arc = place.arc_m + stop_offset;

        // travel from the previous stop
        if let Some(prev_arc) = prev_stop_arc {
            let prev_pi = prev_place.unwrap();
            let edge_idx = pi.min(prev_pi);
            let duration_s = route.edges[edge_idx].sample(rng);
            let depart = t;

            // optional buffering before entering a station
            let buffer = buffering
                .filter(|b| place.kind == StopKind::Station && rng.random_range(0.0..1.0) < b.prob);
            match buffer {
                Some(b) => {
                    let platform_half = place.platform_m / 2.0 + flat_margin_m;
                    let buffer_arc = if forward {
                        place.arc_m - platform_half - b.offset_m
                    } else {
                        place.arc_m + platform_half + b.offset_m
                    };
                    let arrive_buffer = depart + (duration_s * 1000.0) as i64;
                    motions.push(Motion { t0: depart, t1: arrive_buffer, arc0: prev_arc, arc1: buffer_arc, wander_m: 0.0 });
                    events.push(TripEvent {
                        kind: edge_kind(route, prev_pi, pi),
                        element_ref: format!("{}/{}", route.places[prev_pi].id, place.id),
                        t_start_ms: depart,
                        t_end_ms: arrive_buffer,
                    });
                    let wait_s = b.gen.sample(rng);
                    let depart_buffer = arrive_buffer + (wait_s * 1000.0) as i64;
                    motions.push(Motion { t0: arrive_buffer, t1: depart_buffer, arc0: buffer_arc, arc1: buffer_arc, wander_m: wander });
                    events.push(TripEvent {
                        kind: DelayKind::BufferingDelay,
                        element_ref: place.id.clone(),
                        t_start_ms: arrive_buffer,
                        t_end_ms: depart_buffer,
                    });
                    let arrive = depart_buffer + (b.approach_s * 1000.0) as i64;
                    motions.push(Motion { t0: depart_buffer, t1: arrive, arc0: buffer_arc, arc1: stop_arc, wander_m: 0.0 });
                    t = arrive;
                }
                None => {
                    let arrive = depart + (duration_s * 1000.0) as i64;
                    motions.push(Motion { t0: depart, t1: arrive, arc0: prev_arc, arc1: stop_arc, wander_m: 0.0 });
                    events.push(TripEvent {
                        kind: edge_kind(route, prev_pi, pi),
                        element_ref: format!("{}/{}", route.places[prev_pi].id, place.id),
                        t_start_ms: depart,
                        t_end_ms: arrive,
                    });
                    t = arrive;
                }
            }
        }

        // dwell
        arrivals.push((place.id.clone(), t));
        let dwell_s = place.dwell.sample(rng);
        let depart = t + (dwell_s * 1000.0) as i64;
        motions.push(Motion { t0: t, t1: depart, arc0: stop_arc, arc1: stop_arc, wander_m: wander });
        events.push(TripEvent {
            kind: match place.kind {
                StopKind::Station => DelayKind::StationDelay,
                StopKind::TrafficLight => DelayKind::TrafficDelay,
            },
            element_ref: place.id.clone(),
            t_start_ms: t,
            t_end_ms: depart,
        });
        t = depart;
        prev_stop_arc = Some(stop_arc);
        prev_place = Some(pi);
    }

    TripSchedule {
        motions,
        log: TripLog {
            trip_id,
            device_id: None,
            line_id: route.line_id.clone(),
            forward,
            events,
            arrivals,
        },
    }
}

fn edge_kind(route: &Route, a: usize, b: usize) -> DelayKind {
    if route.places[a].kind == StopKind::Station && route.places[b].kind == StopKind::Station {
        DelayKind::SegmentTime
    } else {
        DelayKind::LegTime
    }
}

fn emit_trace(
    schedule: &TripSchedule,
    route: &Route,
    proj: &LocalProjection,
    config: &SimConfig,
    device_id: &str,
    rng: &mut ChaCha8Rng,
    stats: &mut NoiseStats,
) -> Trace {
    let (t_first, t_last) = schedule.span();
    // ride through the terminal dwell: riders take a while to disperse,
    // and ending at tram departure keeps the last dwell fully sampled
    let t_end = schedule.motions.last().map(|m| m.t1).unwrap_or(t_last);
    let dt = (1000.0 / config.sample_hz).round() as i64;
    let board_t = t_first + 3 * dt;
    let alight_t = t_last + 2 * dt;

    let jitter = if config.noise.jitter_sigma_m > 0.0 {
        Some(Normal::new(0.0, config.noise.jitter_sigma_m).unwrap())
    } else {
        None
    };
    // Reported (Doppler) speed is much cleaner than positional jitter.
    let speed_sigma = if config.noise.jitter_sigma_m > 0.0 { 0.05 } else { 0.0 };
    let speed_noise = Normal::new(0.0, speed_sigma).unwrap();

    let mut points = Vec::new();
    let mut burst_left = 0usize;
    let mut burst_dx = 0.0;
    let mut burst_dy = 0.0;
    let mut t = t_first;
    while t <= t_end {
        let (mut arc, speed_true, wander_m) = schedule.sample_at(t);
        if wander_m > 0.0 {
            arc += rng.random_range(-wander_m..=wander_m);
        }
        let (mut x, mut y) = route.path.xy_at(arc);
        if let Some(j) = &jitter {
            x += j.sample(rng);
            y += j.sample(rng);
        }
        if burst_left > 0 {
            x += burst_dx;
            y += burst_dy;
            burst_left -= 1;
            stats.multipath_points += 1;
        } else if config.noise.multipath_burst_prob > 0.0
            && rng.random_range(0.0..1.0) < config.noise.multipath_burst_prob
        {
            // Reflections come from the facades flanking the corridor, so
            // the apparent position jumps cross-track.
            let normal = route.path.heading_at(arc) + std::f64::consts::FRAC_PI_2;
            let side = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
            let angle = normal + rng.random_range(-0.5..0.5);
            let dist = side * rng.random_range(100.0..400.0);
            burst_dx = dist * angle.cos();
            burst_dy = dist * angle.sin();
            burst_left = rng.random_range(2..=4);
            x += burst_dx;
            y += burst_dy;
            burst_left -= 1;
            stats.multipath_points += 1;
        }
        if config.noise.glitch_prob > 0.0 && rng.random_range(0.0..1.0) < config.noise.glitch_prob {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            x += config.noise.glitch_jump_m * angle.cos();
            y += config.noise.glitch_jump_m * angle.sin();
            stats.glitch_points += 1;
        }

        let speed = (speed_true + speed_noise.sample(rng)).max(0.0);
        let event = if t == board_t {
            Some(BoardEvent::Board)
        } else if t == alight_t {
            Some(BoardEvent::Alight)
        } else {
            None
        };
        let point = GpsPoint {
            device_id: device_id.to_string(),
            t_ms: t,
            coord: proj.to_coord(x, y),
            speed: Some(speed),
            event,
        };
        stats.total_points += 1;
        if config.noise.duplicate_prob > 0.0
            && rng.random_range(0.0..1.0) < config.noise.duplicate_prob
        {
            points.push(point.clone());
            stats.duplicate_points += 1;
            stats.total_points += 1;
        }
        points.push(point);
        t += dt;
    }

    Trace { device_id: device_id.to_string(), points }
}

/// Run the full simulation: rider traces plus ground truth plus the
/// matching network description.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    simulate_with_earth(config, EarthModel::default())
}

pub fn simulate_with_earth(config: &SimConfig, earth: EarthModel) -> Result<SimOutput> {
    let compiled = compile(config, earth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = NoiseStats::default();
    let mut traces = Vec::new();
    let mut trips = Vec::new();

    for trip in 0..config.rider_trips {
        let route = &compiled.routes[trip % compiled.routes.len()];
        let forward = (trip / compiled.routes.len()) % 2 == 0;
        let t0 = 60_000 + (trip as f64 * config.headway_s * 1000.0) as i64;
        let device_id = format!("rider-{trip:04}");
        let mut schedule = run_trip(
            trip,
            route,
            forward,
            t0,
            config.tram_length_m,
            config.flat_margin_m,
            &config.buffering,
            &mut rng,
        );
        let trace =
            emit_trace(&schedule, route, &compiled.proj, config, &device_id, &mut rng, &mut stats);
        schedule.log.device_id = Some(device_id);
        trips.push(schedule.log);
        traces.push(trace);
    }

    let network = network_from_compiled(&compiled);
    Ok(SimOutput {
        traces,
        truth: GroundTruth {
            places: compiled.places,
            generators: compiled.generators,
            trips,
            noise: stats,
        },
        network,
    })
}

/// Event logs only (no GPS emission): cheap full-line tram runs for
/// interval-coverage statistics. Deterministic per (config.seed, seed).
pub fn simulate_event_logs(config: &SimConfig, n_trips: usize, seed: u64) -> Result<Vec<TripLog>> {
    let compiled = compile(config, EarthModel::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ seed);
    let mut trips = Vec::new();
    for trip in 0..n_trips {
        let route = &compiled.routes[trip % compiled.routes.len()];
        let forward = (trip / compiled.routes.len()) % 2 == 0;
        let t0 = 60_000 + (trip as f64 * config.headway_s * 1000.0) as i64;
        let schedule = run_trip(
            trip,
            route,
            forward,
            t0,
            config.tram_length_m,
            config.flat_margin_m,
            &config.buffering,
            &mut rng,
        );
        trips.push(schedule.log);
    }
    Ok(trips)
}

/// Simulate several seeds (in parallel when enabled), otherwise identical
/// configs.
pub fn simulate_seeds(config: &SimConfig, seeds: &[u64]) -> Result<Vec<SimOutput>> {
    let run = |&seed: &u64| {
        let mut c = config.clone();
        c.seed = seed;
        simulate(&c)
    };
    #[cfg(feature = "parallel")]
    {
        seeds.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(run).collect()
    }
}

/// Write traces (one CSV per rider), ground truth, and network JSON under
/// a directory.
pub fn write_outputs(out: &SimOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir)
        .map_err(|e| Error::io(traces_dir.display().to_string(), e))?;
    for trace in &out.traces {
        let path = traces_dir.join(format!("{}.csv", trace.device_id));
        crate::trace::write_trace_file(&path, std::slice::from_ref(trace))?;
    }
    out.truth.save(dir.join("ground_truth.json"))?;
    out.network.save(dir.join("network.json"))?;
    Ok(())
}

/// Truth centroids in the evaluation form used by centroid matching.
pub fn truth_centroids(truth: &GroundTruth) -> Vec<crate::cluster::TruthCentroid> {
    truth
        .places
        .iter()
        .map(|p| crate::cluster::TruthCentroid {
            coord: GeoCoord { lat: p.lat, lon: p.lon },
            is_station: p.kind == StopKind::Station,
        })
        .collect()
}
