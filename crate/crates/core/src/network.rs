//! Transit-network topology, travel-direction detection, and line
//! identification by map matching at split areas.
//!
//! The network is supplied, not inferred: the simulator emits one for its
//! synthetic geometry, and for real deployments it is hand-authored from
//! the discovered stations database. Line polylines are stored in
//! west-to-east order; that orientation convention is what makes the
//! direction sign meaningful.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geo::{EarthModel, GeoCoord, LocalProjection};
use crate::trace::{GpsPoint, Trace};
use crate::{Error, Result};

/// Rectangular lat/lon region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLonBounds {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl LatLonBounds {
    pub fn contains(&self, c: GeoCoord) -> bool {
        c.lat >= self.min_lat && c.lat <= self.max_lat && c.lon >= self.min_lon && c.lon <= self.max_lon
    }

    pub fn from_coords<'a>(coords: impl IntoIterator<Item = &'a GeoCoord>) -> Option<Self> {
        let mut it = coords.into_iter();
        let first = it.next()?;
        let mut b = LatLonBounds {
            min_lat: first.lat,
            min_lon: first.lon,
            max_lat: first.lat,
            max_lon: first.lon,
        };
        for c in it {
            b.min_lat = b.min_lat.min(c.lat);
            b.max_lat = b.max_lat.max(c.lat);
            b.min_lon = b.min_lon.min(c.lon);
            b.max_lon = b.max_lon.max(c.lon);
        }
        Some(b)
    }
}

/// One line: ordered stop places (stations and traffic lights) and the
/// track polyline, both west to east.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub places: Vec<String>,
    pub polyline: Vec<GeoCoord>,
}

/// Region where lines sharing a trunk diverge onto distinct branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArea {
    pub region: LatLonBounds,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitNetwork {
    pub lines: Vec<Line>,
    pub split_areas: Vec<SplitArea>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    EastToWest,
    WestToEast,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::EastToWest => Direction::WestToEast,
            Direction::WestToEast => Direction::EastToWest,
        }
    }
}

/// Direction detection over a window of points; displacement below the
/// minimum is an explicit indeterminate answer, never a guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionResult {
    Determinate(Direction),
    Indeterminate,
}

/// Line identification result; trunk-only evidence is explicitly
/// ambiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineMatch {
    Line(String),
    Ambiguous,
}

impl TransitNetwork {
    pub fn validate(&self) -> Result<()> {
        if self.lines.is_empty() {
            return Err(Error::NetworkSpec("network has no lines".into()));
        }
        for line in &self.lines {
            if line.places.len() < 2 {
                return Err(Error::NetworkSpec(format!("line {} has fewer than 2 places", line.id)));
            }
            if line.polyline.len() < 2 {
                return Err(Error::NetworkSpec(format!("line {} polyline too short", line.id)));
            }
        }
        for (i, area) in self.split_areas.iter().enumerate() {
            if area.lines.len() < 2 {
                return Err(Error::NetworkSpec(format!("split area {i} references < 2 lines")));
            }
            for id in &area.lines {
                if !self.lines.iter().any(|l| &l.id == id) {
                    return Err(Error::NetworkSpec(format!("split area {i} references unknown line {id}")));
                }
            }
        }
        Ok(())
    }

    pub fn line(&self, id: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let net: TransitNetwork =
            serde_json::from_str(json).map_err(|e| Error::NetworkSpec(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let json =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&json)
    }

    /// Rewrite place ids to the detected database's ids by proximity:
    /// each place (located via `place_coords`) maps to the nearest entry
    /// of `detected` within `dt_deg` (degree distance). Places with no
    /// counterpart are dropped from the sequences, which merges their
    /// adjacent edges; the dropped ids are returned for reporting.
    pub fn rekey_places(
        &self,
        place_coords: &BTreeMap<String, GeoCoord>,
        detected: &[(String, GeoCoord)],
        dt_deg: f64,
    ) -> (TransitNetwork, Vec<String>) {
        let mut dropped = Vec::new();
        let mut mapped: BTreeMap<String, Option<String>> = BTreeMap::new();
        for line in &self.lines {
            for place in &line.places {
                mapped.entry(place.clone()).or_insert_with(|| {
                    let coord = place_coords.get(place)?;
                    detected
                        .iter()
                        .map(|(id, c)| {
                            let d_lat = c.lat - coord.lat;
                            let d_lon = c.lon - coord.lon;
                            (id, (d_lat * d_lat + d_lon * d_lon).sqrt())
                        })
                        .filter(|&(_, d)| d <= dt_deg)
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .map(|(id, _)| id.clone())
                });
            }
        }
        for (orig, target) in &mapped {
            if target.is_none() {
                dropped.push(orig.clone());
            }
        }
        let lines = self
            .lines
            .iter()
            .map(|line| Line {
                id: line.id.clone(),
                places: line.places.iter().filter_map(|p| mapped[p].clone()).collect(),
                polyline: line.polyline.clone(),
            })
            .collect();
        (TransitNetwork { lines, split_areas: self.split_areas.clone() }, dropped)
    }
}

/// Minimum over segments of the point-to-segment distance, in meters,
/// using a local planar projection anchored at the polyline start.
pub fn point_to_polyline_distance(p: GeoCoord, polyline: &[GeoCoord], earth: EarthModel) -> f64 {
    assert!(polyline.len() >= 2, "polyline needs >= 2 vertices");
    let proj = LocalProjection::new(polyline[0], earth);
    let (px, py) = proj.to_xy(p);
    let mut best = f64::INFINITY;
    for w in polyline.windows(2) {
        let (ax, ay) = proj.to_xy(w[0]);
        let (bx, by) = proj.to_xy(w[1]);
        best = best.min(point_segment_distance(px, py, ax, ay, bx, by));
    }
    best
}

fn point_segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Projection of a point onto a polyline: perpendicular distance plus the
/// arc-length position of the foot point from the polyline start.
pub fn project_onto_polyline(p: GeoCoord, polyline: &[GeoCoord], earth: EarthModel) -> (f64, f64) {
    assert!(polyline.len() >= 2, "polyline needs >= 2 vertices");
    let proj = LocalProjection::new(polyline[0], earth);
    let (px, py) = proj.to_xy(p);
    let mut best = (f64::INFINITY, 0.0);
    let mut arc_before = 0.0;
    for w in polyline.windows(2) {
        let (ax, ay) = proj.to_xy(w[0]);
        let (bx, by) = proj.to_xy(w[1]);
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let seg_len = len2.sqrt();
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (ax + t * dx, ay + t * dy);
        let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
        if d < best.0 {
            best = (d, arc_before + t * seg_len);
        }
        arc_before += seg_len;
    }
    best
}

/// Total polyline length in planar meters.
pub fn polyline_length(polyline: &[GeoCoord], earth: EarthModel) -> f64 {
    let proj = LocalProjection::new(polyline[0], earth);
    polyline
        .windows(2)
        .map(|w| {
            let (ax, ay) = proj.to_xy(w[0]);
            let (bx, by) = proj.to_xy(w[1]);
            ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt()
        })
        .sum()
}

/// Net-displacement direction of a window of points, projected onto the
/// local route tangent. Positive along the stored (west-to-east) polyline
/// orientation means [`Direction::WestToEast`].
pub fn detect_direction(
    window: &[GpsPoint],
    network: &TransitNetwork,
    d_min_m: f64,
    earth: EarthModel,
) -> DirectionResult {
    let (first, last) = match (window.first(), window.last()) {
        (Some(a), Some(b)) => (a.coord, b.coord),
        _ => return DirectionResult::Indeterminate,
    };
    let proj = LocalProjection::new(first, earth);
    let (dx, dy) = proj.to_xy(last);
    if (dx * dx + dy * dy).sqrt() < d_min_m {
        return DirectionResult::Indeterminate;
    }

    // Local tangent: the nearest polyline segment to the window midpoint.
    let mid = window[window.len() / 2].coord;
    let mut best: Option<(f64, (f64, f64))> = None;
    for line in &network.lines {
        let lproj = LocalProjection::new(line.polyline[0], earth);
        let (mx, my) = lproj.to_xy(mid);
        for w in line.polyline.windows(2) {
            let (ax, ay) = lproj.to_xy(w[0]);
            let (bx, by) = lproj.to_xy(w[1]);
            let d = point_segment_distance(mx, my, ax, ay, bx, by);
            if best.is_none_or(|(bd, _)| d < bd) {
                let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
                best = Some((d, ((bx - ax) / len, (by - ay) / len)));
            }
        }
    }
    let (_, (tx, ty)) = match best {
        Some(b) => b,
        None => return DirectionResult::Indeterminate,
    };
    let along = dx * tx + dy * ty;
    if along > 0.0 {
        DirectionResult::Determinate(Direction::WestToEast)
    } else {
        DirectionResult::Determinate(Direction::EastToWest)
    }
}

/// Identify which line a trace followed by comparing its post-split points
/// against each candidate branch geometry. The winning line must beat the
/// runner-up by `margin_m` of mean point-to-polyline distance; anything
/// less, or a trace that never enters a split area, is ambiguous.
pub fn identify_line(
    trace: &Trace,
    network: &TransitNetwork,
    margin_m: f64,
    earth: EarthModel,
) -> LineMatch {
    let entry = trace
        .points
        .iter()
        .position(|p| network.split_areas.iter().any(|a| a.region.contains(p.coord)));
    let entry = match entry {
        Some(i) => i,
        None => return LineMatch::Ambiguous,
    };
    let post_split: Vec<GeoCoord> = trace.points[entry..].iter().map(|p| p.coord).collect();

    let mut candidate_ids: Vec<&String> = network
        .split_areas
        .iter()
        .filter(|a| trace.points[entry..].iter().any(|p| a.region.contains(p.coord)))
        .flat_map(|a| a.lines.iter())
        .collect();
    candidate_ids.sort();
    candidate_ids.dedup();

    let mut scored: Vec<(f64, &String)> = candidate_ids
        .iter()
        .filter_map(|id| network.line(id))
        .map(|line| {
            let mean = post_split
                .iter()
                .map(|&p| point_to_polyline_distance(p, &line.polyline, earth))
                .sum::<f64>()
                / post_split.len() as f64;
            (mean, &line.id)
        })
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());

    match scored.as_slice() {
        [] => LineMatch::Ambiguous,
        [only] => LineMatch::Line(only.1.clone()),
        [best, runner_up, ..] => {
            if runner_up.0 - best.0 > margin_m {
                LineMatch::Line(best.1.clone())
            } else {
                LineMatch::Ambiguous
            }
        }
    }
}
