//! Delay distributions and trip-time estimation.
//!
//! Every random element of a trip (station dwells, traffic-light waits,
//! buffering, segment and leg travel times) is fitted as a normal
//! distribution from observed samples, checked with a one-sample
//! Kolmogorov-Smirnov test, and stored keyed by element. A trip is a
//! linear aggregation of independent elements, so the estimate is again
//! normal: mean `sum(c_i * mu_i)`, variance `sum(c_i^2 * sigma_i^2)`. The
//! destination station's dwell never enters a plan: the trip ends on
//! arrival there.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geo::{EarthModel, GeoCoord};
use crate::network::{project_onto_polyline, Direction, Line, TransitNetwork};
use crate::stations::{detect_buffering, detect_stationary, StationConfig, StationsDb, StopKind};
use crate::stats::{normal_pdf, standard_normal_cdf, RunningMoments};
use crate::trace::Trace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    /// Tram dwell at a station.
    StationDelay,
    /// Tram wait at a traffic signal.
    TrafficDelay,
    /// Wait of a tram queued behind another occupying the next station.
    BufferingDelay,
    /// Travel between consecutive stations with no intervening light.
    SegmentTime,
    /// Travel between a station/light and the next station/light when a
    /// light interrupts the path.
    LegTime,
}

/// What a distribution describes: a single place or a directed edge
/// between two places. The string form is the place id, or `from/to`
/// (place ids must not contain `/`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementRef {
    Place(String),
    Edge(String, String),
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementRef::Place(id) => write!(f, "{id}"),
            ElementRef::Edge(a, b) => write!(f, "{a}/{b}"),
        }
    }
}

impl ElementRef {
    pub fn parse(s: &str) -> Self {
        match s.split_once('/') {
            Some((a, b)) => ElementRef::Edge(a.to_string(), b.to_string()),
            None => ElementRef::Place(s.to_string()),
        }
    }
}

impl Serialize for ElementRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ElementRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(ElementRef::parse(&s))
    }
}

/// Observed samples for one element, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySamples {
    pub kind: DelayKind,
    pub element_ref: ElementRef,
    pub samples: Vec<f64>,
    pub observed_at_ms: Vec<i64>,
}

/// One-sample KS outcome against the fitted normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_star: f64,
    pub critical: f64,
    pub alpha: f64,
    pub pass: bool,
}

/// Fitted normal for one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    pub kind: DelayKind,
    pub element_ref: ElementRef,
    pub mu_s: f64,
    pub sigma2_s2: f64,
    /// Observed sample count.
    pub n: u64,
    /// Effective weight after decayed history updates; equals `n` until a
    /// decaying update is applied.
    #[serde(default)]
    pub eff_weight: f64,
    pub ks: Option<KsResult>,
    /// Degenerate fits (zero variance) skip the KS check.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    pub version: u32,
}

impl DelayDistribution {
    pub fn eligible(&self, n_min: u64) -> bool {
        self.n >= n_min
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma2_s2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// KS significance level.
    pub alpha: f64,
    /// Minimum samples for a fit to be query-eligible.
    pub n_min: u64,
    /// Two-sided interval quantile (1.96 for a 95% interval).
    pub z_gamma: f64,
    /// Snap radius for vehicle-view queries.
    pub snap_m: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { alpha: 0.05, n_min: 8, z_gamma: 1.96, snap_m: 50.0 }
    }
}

/// Sup-distance between the empirical CDF of `samples` and the CDF of
/// Normal(mu, sigma^2): samples are standardized and compared against the
/// standard normal at every jump of the empirical CDF.
pub fn ks_statistic(samples: &[f64], mu: f64, sigma: f64) -> f64 {
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mu) / sigma).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len() as f64;
    let mut d = 0.0f64;
    for (i, zi) in z.iter().enumerate() {
        let g = standard_normal_cdf(*zi);
        d = d.max(((i + 1) as f64 / n - g).abs());
        d = d.max((g - i as f64 / n).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at alpha = 0.05.
pub fn ks_critical(n: u64, alpha: f64) -> f64 {
    // 1.36/sqrt(n) is the alpha = 0.05 constant; scale the constant for
    // the two other conventional levels, defaulting to 0.05 otherwise.
    let c = if (alpha - 0.01).abs() < 1e-12 {
        1.63
    } else if (alpha - 0.10).abs() < 1e-12 {
        1.22
    } else {
        1.36
    };
    c / (n as f64).sqrt()
}

/// Fit a normal to the samples: sample mean, unbiased variance, and a KS
/// normality check on the standardized data. Below `n_min` samples the
/// fit is kept but is not query-eligible and the KS check is skipped.
/// The critical value is the asymptotic large-sample approximation; since
/// (mu, sigma) are estimated from the same data the check is a
/// goodness-of-fit indicator, not an exact-level test.
pub fn fit_delay(
    kind: DelayKind,
    element_ref: ElementRef,
    samples: &[f64],
    config: &TimingConfig,
) -> DelayDistribution {
    let m = RunningMoments::from_samples(samples);
    let n = samples.len() as u64;
    let mu = m.mean;
    let sigma2 = m.variance();
    let degenerate = n > 0 && sigma2 == 0.0;
    let ks = if n >= config.n_min && !degenerate {
        let d_star = ks_statistic(samples, mu, sigma2.sqrt());
        let critical = ks_critical(n, config.alpha);
        Some(KsResult { d_star, critical, alpha: config.alpha, pass: d_star <= critical })
    } else {
        None
    };
    DelayDistribution {
        kind,
        element_ref,
        mu_s: mu,
        sigma2_s2: sigma2,
        n,
        eff_weight: n as f64,
        ks,
        degenerate,
        version: 1,
    }
}

/// Fold a new batch of samples into an existing fit.
///
/// With `lambda = 1` the result is exactly what refitting on the
/// concatenated samples would give (mean and variance). With
/// `lambda < 1` the old statistics' effective weight decays by `lambda`
/// before the batch is pooled, so newer data dominates. The stale KS
/// result is dropped; rerun a full fit when raw history is available.
pub fn update_history(
    dist: &DelayDistribution,
    new_samples: &[f64],
    lambda: f64,
) -> Result<DelayDistribution> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be in (0, 1]")));
    }
    if new_samples.is_empty() {
        return Ok(dist.clone());
    }
    let weight = if dist.eff_weight > 0.0 { dist.eff_weight } else { dist.n as f64 };
    let mut moments = RunningMoments {
        weight,
        mean: dist.mu_s,
        m2: dist.sigma2_s2 * (weight - 1.0).max(0.0),
    };
    moments.merge(&RunningMoments::from_samples(new_samples), lambda);
    Ok(DelayDistribution {
        kind: dist.kind,
        element_ref: dist.element_ref.clone(),
        mu_s: moments.mean,
        sigma2_s2: moments.variance(),
        n: dist.n + new_samples.len() as u64,
        eff_weight: moments.weight,
        ks: None,
        degenerate: moments.variance() == 0.0,
        version: dist.version + 1,
    })
}

/// One additive term of a trip plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTerm {
    pub kind: DelayKind,
    pub element_ref: ElementRef,
    /// 1 everywhere except the prorated in-progress element of a
    /// vehicle-view query.
    pub coeff: f64,
}

/// Ordered elements from source to destination. The destination station's
/// dwell is excluded by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripPlan {
    pub terms: Vec<PlanTerm>,
    /// Stations from source to destination inclusive.
    pub n_stations: usize,
    /// Traffic lights strictly along the way.
    pub m_lights: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripEstimate {
    pub expected_s: f64,
    pub sigma_s: f64,
    pub interval_lo_s: f64,
    pub interval_hi_s: f64,
    pub confidence_z: f64,
}

/// Collection of fitted distributions keyed by (kind, element), persisted
/// as a JSON array. Single writer; queries read immutable snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DelayStore {
    entries: BTreeMap<(DelayKind, ElementRef), DelayDistribution>,
}

impl DelayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dist: DelayDistribution) {
        self.entries.insert((dist.kind, dist.element_ref.clone()), dist);
    }

    pub fn get(&self, kind: DelayKind, element: &ElementRef) -> Option<&DelayDistribution> {
        self.entries.get(&(kind, element.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &DelayDistribution> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Apply a batch of new samples to an element, fitting from scratch if
    /// the element is new.
    pub fn apply_batch(
        &mut self,
        kind: DelayKind,
        element: ElementRef,
        samples: &[f64],
        lambda: f64,
        config: &TimingConfig,
    ) -> Result<()> {
        let updated = match self.get(kind, &element) {
            Some(existing) => update_history(existing, samples, lambda)?,
            None => fit_delay(kind, element.clone(), samples, config),
        };
        self.insert(updated);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&DelayDistribution> = self.entries.values().collect();
        serde_json::to_string_pretty(&list).expect("store serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let list: Vec<DelayDistribution> =
            serde_json::from_str(&json).map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut store = DelayStore::new();
        for mut d in list {
            if d.eff_weight == 0.0 {
                d.eff_weight = d.n as f64;
            }
            store.insert(d);
        }
        Ok(store)
    }

    /// Bootstrap from historical data when present, else start empty.
    pub fn bootstrap(path: impl AsRef<Path>) -> Result<Self> {
        if path.as_ref().exists() {
            Self::load(path)
        } else {
            Ok(DelayStore::new())
        }
    }
}

/// Expected trip time and spread for a plan, from fitted distributions.
/// Fails listing the first element that has no eligible distribution.
pub fn trip_time(plan: &TripPlan, store: &DelayStore, config: &TimingConfig) -> Result<TripEstimate> {
    let mut expected = 0.0;
    let mut variance = 0.0;
    for term in &plan.terms {
        let dist = store
            .get(term.kind, &term.element_ref)
            .filter(|d| d.eligible(config.n_min))
            .ok_or_else(|| Error::UnresolvedElement(format!("{:?} {}", term.kind, term.element_ref)))?;
        expected += term.coeff * dist.mu_s;
        variance += term.coeff * term.coeff * dist.sigma2_s2;
    }
    let sigma = variance.sqrt();
    Ok(TripEstimate {
        expected_s: expected,
        sigma_s: sigma,
        interval_lo_s: expected - config.z_gamma * sigma,
        interval_hi_s: expected + config.z_gamma * sigma,
        confidence_z: config.z_gamma,
    })
}

/// Network + stations database glue used to build plans.
pub struct NetworkModel<'a> {
    pub network: &'a TransitNetwork,
    pub db: &'a StationsDb,
    pub earth: EarthModel,
}

impl<'a> NetworkModel<'a> {
    pub fn new(network: &'a TransitNetwork, db: &'a StationsDb, earth: EarthModel) -> Self {
        NetworkModel { network, db, earth }
    }

    fn place_kind(&self, id: &str) -> Result<StopKind> {
        self.db
            .get(id)
            .map(|p| p.kind)
            .ok_or_else(|| Error::NetworkSpec(format!("place {id} not in stations db")))
    }

    /// Place sequence of a line in travel order.
    fn ordered_places(line: &Line, direction: Direction) -> Vec<&String> {
        match direction {
            Direction::WestToEast => line.places.iter().collect(),
            Direction::EastToWest => line.places.iter().rev().collect(),
        }
    }

    /// Plan between two places of one line. Source dwell included,
    /// destination dwell excluded.
    pub fn plan_between(
        &self,
        line_id: &str,
        direction: Direction,
        source: &str,
        destination: &str,
    ) -> Result<TripPlan> {
        let line = self
            .network
            .line(line_id)
            .ok_or_else(|| Error::NetworkSpec(format!("unknown line {line_id}")))?;
        let places = Self::ordered_places(line, direction);
        let src = places.iter().position(|p| p.as_str() == source);
        let dst = places.iter().position(|p| p.as_str() == destination);
        let (src, dst) = match (src, dst) {
            (Some(s), Some(d)) if s < d => (s, d),
            _ => return Err(Error::Unreachable(destination.to_string())),
        };
        self.plan_from_index(&places, src, dst, None)
    }

    fn plan_from_index(
        &self,
        places: &[&String],
        src: usize,
        dst: usize,
        first_edge: Option<PlanTerm>,
    ) -> Result<TripPlan> {
        let mut terms = Vec::new();
        let mut n_stations = 0;
        let mut m_lights = 0;
        if let Some(edge) = first_edge {
            terms.push(edge);
        }
        for i in src..=dst {
            let kind = self.place_kind(places[i])?;
            match kind {
                StopKind::Station => n_stations += 1,
                StopKind::TrafficLight if i != dst => m_lights += 1,
                StopKind::TrafficLight => {}
            }
            if i != dst {
                let dwell_kind = match kind {
                    StopKind::Station => DelayKind::StationDelay,
                    StopKind::TrafficLight => DelayKind::TrafficDelay,
                };
                terms.push(PlanTerm {
                    kind: dwell_kind,
                    element_ref: ElementRef::Place(places[i].clone()),
                    coeff: 1.0,
                });
                terms.push(self.edge_term(places[i], places[i + 1], 1.0)?);
            }
        }
        Ok(TripPlan { terms, n_stations, m_lights })
    }

    fn edge_term(&self, from: &str, to: &str, coeff: f64) -> Result<PlanTerm> {
        let kind = if self.place_kind(from)? == StopKind::Station
            && self.place_kind(to)? == StopKind::Station
        {
            DelayKind::SegmentTime
        } else {
            DelayKind::LegTime
        };
        Ok(PlanTerm {
            kind,
            element_ref: ElementRef::Edge(from.to_string(), to.to_string()),
            coeff,
        })
    }

    /// Classify the directed edge between two adjacent places, if they are
    /// adjacent on any line in the given travel sense.
    pub fn adjacent_edge(&self, from: &str, to: &str) -> Option<(DelayKind, ElementRef)> {
        for line in &self.network.lines {
            for w in line.places.windows(2) {
                if (w[0] == from && w[1] == to) || (w[0] == to && w[1] == from) {
                    let kind = match (self.place_kind(from).ok()?, self.place_kind(to).ok()?) {
                        (StopKind::Station, StopKind::Station) => DelayKind::SegmentTime,
                        _ => DelayKind::LegTime,
                    };
                    return Some((kind, ElementRef::Edge(from.to_string(), to.to_string())));
                }
            }
        }
        None
    }
}

/// A vehicle-view ETA query: a rider on a tram asking when they arrive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleQuery {
    pub position: GeoCoord,
    pub destination: String,
    pub direction: Direction,
    /// Restrict matching to one line (e.g. from line identification);
    /// otherwise every line containing the destination is considered.
    pub line_hint: Option<String>,
}

/// Build the remaining plan for a riding vehicle and estimate it.
///
/// The position snaps to the nearest line polyline within the snap radius.
/// Inside a stop place's MBR the plan starts at that place (dwell
/// included); between places the in-progress edge enters with coefficient
/// `1 - fraction covered` and the plan continues from the next place.
pub fn eta_vehicle_view(
    query: &VehicleQuery,
    model: &NetworkModel<'_>,
    store: &DelayStore,
    config: &TimingConfig,
) -> Result<TripEstimate> {
    let plan = plan_vehicle_view(query, model, config)?;
    trip_time(&plan, store, config)
}

pub fn plan_vehicle_view(
    query: &VehicleQuery,
    model: &NetworkModel<'_>,
    config: &TimingConfig,
) -> Result<TripPlan> {
    let candidates: Vec<&Line> = model
        .network
        .lines
        .iter()
        .filter(|l| query.line_hint.as_ref().is_none_or(|h| h == &l.id))
        .filter(|l| l.places.iter().any(|p| p == &query.destination))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Unreachable(query.destination.clone()));
    }

    let mut nearest = f64::INFINITY;
    let mut best: Option<(&Line, f64, f64)> = None;
    for line in &candidates {
        let (dist, arc) = project_onto_polyline(query.position, &line.polyline, model.earth);
        nearest = nearest.min(dist);
        if dist <= config.snap_m && best.as_ref().is_none_or(|&(_, _, d)| dist < d) {
            best = Some((line, arc, dist));
        }
    }
    let (line, arc, _) =
        best.ok_or(Error::Unsnappable { nearest_m: nearest, snap_m: config.snap_m })?;

    // Travel-order place list and their arc positions along the polyline.
    let places = NetworkModel::ordered_places(line, query.direction);
    let arcs: Vec<f64> = places
        .iter()
        .map(|id| {
            let place = model
                .db
                .get(id)
                .ok_or_else(|| Error::NetworkSpec(format!("place {id} not in stations db")))?;
            Ok(project_onto_polyline(place.centroid(), &line.polyline, model.earth).1)
        })
        .collect::<Result<_>>()?;

    let dst = places
        .iter()
        .position(|p| p.as_str() == query.destination)
        .ok_or_else(|| Error::Unreachable(query.destination.clone()))?;

    // Inside a place's MBR: the plan starts at that place.
    if let Some(at) = places.iter().position(|id| {
        model.db.get(id).is_some_and(|p| p.contains(query.position))
    }) {
        if at > dst {
            return Err(Error::Unreachable(query.destination.clone()));
        }
        return model.plan_from_index(&places, at, dst, None);
    }

    // Otherwise locate the in-progress edge in travel order.
    let ahead = |a: f64, b: f64| match query.direction {
        Direction::WestToEast => a <= b,
        Direction::EastToWest => a >= b,
    };
    let edge = (0..places.len() - 1)
        .find(|&i| ahead(arcs[i], arc) && ahead(arc, arcs[i + 1]))
        .ok_or_else(|| Error::Unreachable(query.destination.clone()))?;
    if edge + 1 > dst {
        return Err(Error::Unreachable(query.destination.clone()));
    }
    let span = (arcs[edge + 1] - arcs[edge]).abs();
    let covered = (arc - arcs[edge]).abs();
    let remaining = if span > 0.0 { (1.0 - covered / span).clamp(0.0, 1.0) } else { 0.0 };
    let first_edge = {
        let mut t = model.edge_term(places[edge], places[edge + 1], remaining)?;
        t.coeff = remaining;
        Some(t)
    };
    model.plan_from_index(&places, edge + 1, dst, first_edge)
}

/// One live tram position for station-view queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveTram {
    pub id: String,
    pub position: GeoCoord,
    pub direction: Direction,
    pub line_hint: Option<String>,
}

/// Station-view ETA: the soonest arriving tram among the live candidates
/// that can reach the station in their travel direction.
pub fn eta_station_view(
    station: &str,
    live: &[LiveTram],
    model: &NetworkModel<'_>,
    store: &DelayStore,
    config: &TimingConfig,
) -> Result<(String, TripEstimate)> {
    let mut best: Option<(String, TripEstimate)> = None;
    for tram in live {
        let query = VehicleQuery {
            position: tram.position,
            destination: station.to_string(),
            direction: tram.direction,
            line_hint: tram.line_hint.clone(),
        };
        if let Ok(est) = eta_vehicle_view(&query, model, store, config) {
            if best.as_ref().is_none_or(|(_, b)| est.expected_s < b.expected_s) {
                best = Some((tram.id.clone(), est));
            }
        }
    }
    best.ok_or_else(|| Error::NoUpcomingArrival(station.to_string()))
}

/// Everything extracted from one batch of traces.
#[derive(Debug, Clone, Default)]
pub struct ExtractionOutcome {
    pub samples: Vec<DelaySamples>,
    /// Stop intervals matching no known element.
    pub skipped_intervals: usize,
    /// Place-to-place movements with no adjacent edge in the network.
    pub skipped_transitions: usize,
}

impl ExtractionOutcome {
    pub fn count(&self, kind: DelayKind) -> usize {
        self.samples.iter().filter(|s| s.kind == kind).map(|s| s.samples.len()).sum()
    }
}

/// Turn cleaned traces into per-element delay samples.
///
/// Dwells inside a station MBR sample that station's delay; dwells at a
/// light sample its traffic delay; stop intervals hovering just upstream
/// of the trace's next station sample buffering. Travel durations between
/// consecutive place visits sample the directed edge between them
/// (segment when both ends are stations, leg otherwise).
pub fn extract_delay_samples(
    traces: &[Trace],
    db: &StationsDb,
    network: &TransitNetwork,
    station_config: &StationConfig,
    earth: EarthModel,
) -> ExtractionOutcome {
    let model = NetworkModel::new(network, db, earth);
    let mut acc: BTreeMap<(DelayKind, ElementRef), (Vec<f64>, Vec<i64>)> = BTreeMap::new();
    let mut out = ExtractionOutcome::default();

    for trace in traces {
        let intervals = detect_stationary(
            trace,
            station_config.v_thresh_mps,
            station_config.min_dwell_s,
            earth,
        );

        // (place index in db, interval index) visits in time order
        let mut visits: Vec<(usize, usize)> = Vec::new();
        let mut matched = vec![false; intervals.len()];
        for (i, interval) in intervals.iter().enumerate() {
            if let Some(p_idx) = db.places.iter().position(|p| p.contains(interval.centroid)) {
                matched[i] = true;
                visits.push((p_idx, i));
                let place = &db.places[p_idx];
                let kind = match place.kind {
                    StopKind::Station => DelayKind::StationDelay,
                    StopKind::TrafficLight => DelayKind::TrafficDelay,
                };
                let entry = acc
                    .entry((kind, ElementRef::Place(place.id.clone())))
                    .or_default();
                entry.0.push(interval.dwell_s());
                entry.1.push(interval.t_start_ms);
            }
        }

        // buffering among unmatched intervals
        let buffering = detect_buffering(&intervals, db, station_config.upstream_m, earth);
        for b in &buffering {
            if matched[b.interval_index] {
                continue;
            }
            matched[b.interval_index] = true;
            let interval = &intervals[b.interval_index];
            let entry = acc
                .entry((DelayKind::BufferingDelay, ElementRef::Place(b.station_id.clone())))
                .or_default();
            entry.0.push(interval.dwell_s());
            entry.1.push(interval.t_start_ms);
        }
        out.skipped_intervals += matched.iter().filter(|m| !**m).count();

        // travel durations: departure from one place to arrival at the next
        for w in visits.windows(2) {
            let (p_from, i_from) = w[0];
            let (p_to, i_to) = w[1];
            if p_from == p_to {
                continue; // re-detected dwell at the same place
            }
            let from = &db.places[p_from].id;
            let to = &db.places[p_to].id;
            match model.adjacent_edge(from, to) {
                Some((kind, element)) => {
                    let duration =
                        (intervals[i_to].t_start_ms - intervals[i_from].t_end_ms) as f64 / 1000.0;
                    if duration > 0.0 {
                        let entry = acc.entry((kind, element)).or_default();
                        entry.0.push(duration);
                        entry.1.push(intervals[i_from].t_end_ms);
                    }
                }
                None => out.skipped_transitions += 1,
            }
        }
    }

    out.samples = acc
        .into_iter()
        .map(|((kind, element_ref), (samples, observed_at_ms))| DelaySamples {
            kind,
            element_ref,
            samples,
            observed_at_ms,
        })
        .collect();
    out
}

/// Fit every extracted element into a store.
pub fn fit_all(samples: &[DelaySamples], config: &TimingConfig) -> DelayStore {
    let mut store = DelayStore::new();
    for s in samples {
        store.insert(fit_delay(s.kind, s.element_ref.clone(), &s.samples, config));
    }
    store
}

/// PDF/CDF sample grids of every eligible fitted element, as CSV rows
/// `kind,element_ref,x_s,pdf,cdf` over mu +/- 4 sigma.
pub fn distribution_grid_csv(store: &DelayStore, config: &TimingConfig, points: usize) -> String {
    let mut out = String::from("kind,element_ref,x_s,pdf,cdf\n");
    for dist in store.iter() {
        if !dist.eligible(config.n_min) || dist.sigma2_s2 <= 0.0 {
            continue;
        }
        let sigma = dist.sigma_s();
        let kind = serde_json::to_value(dist.kind).unwrap();
        let kind = kind.as_str().unwrap().to_string();
        for i in 0..points {
            let x = dist.mu_s - 4.0 * sigma + 8.0 * sigma * i as f64 / (points - 1) as f64;
            let pdf = normal_pdf(x, dist.mu_s, sigma);
            let cdf = standard_normal_cdf((x - dist.mu_s) / sigma);
            out.push_str(&format!("{kind},{},{x},{pdf},{cdf}\n", dist.element_ref));
        }
    }
    out
}
