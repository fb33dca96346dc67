//! Cross-module scenarios against simulator ground truth: sample
//! extraction counts, buffering recovery, parameter-sweep recovery, ETA
//! query semantics, and interval coverage under the true generators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use railtrace_core::cluster;
use railtrace_core::geo::{EarthModel, GeoCoord};
use railtrace_core::network::Direction;
use railtrace_core::preprocess::{self, PreprocessConfig};
use railtrace_core::sim::{self, BufferingSpec, NoiseProfile, SimConfig};
use railtrace_core::stations::{
    detect_buffering, detect_stationary, discover_stop_places, StationConfig, StationsDb, StopKind,
};
use railtrace_core::timing::{
    self, DelayDistribution, DelayKind, DelayStore, ElementRef, LiveTram, NetworkModel,
    TimingConfig, VehicleQuery,
};
use railtrace_core::trace::Trace;

const EARTH: EarthModel = EarthModel { radius_km: 6373.0 };

fn clean(traces: &[Trace]) -> Vec<Trace> {
    preprocess::preprocess_batch(traces, &PreprocessConfig::per_trace_1hz())
        .unwrap()
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

/// Stations db built straight from ground truth, for tests that isolate
/// timing from detection quality.
fn truth_db(truth: &sim::GroundTruth) -> StationsDb {
    let places = truth
        .places
        .iter()
        .map(|p| railtrace_core::stations::StopPlace {
            id: p.id.clone(),
            kind: p.kind,
            lat: p.lat,
            lon: p.lon,
            mbr: p.mbr,
            platform_length_m: (p.kind == StopKind::Station).then_some(p.platform_length_m),
            visit_count: 0,
            median_dwell_s: 0.0,
            low_confidence: false,
            degenerate: false,
            version: 1,
        })
        .collect();
    StationsDb::from_places(places).unwrap()
}

/// Truth MBRs are tight platform boxes; widen them a little so jittered
/// dwell centroids still fall inside, the way detected MBRs naturally
/// would.
fn widened_truth_db(truth: &sim::GroundTruth, margin_m: f64) -> StationsDb {
    let mut db = truth_db(truth);
    let deg = margin_m / EARTH.meters_per_degree();
    for p in &mut db.places {
        p.mbr[0][0] -= deg;
        p.mbr[0][1] -= deg;
        p.mbr[1][0] -= deg;
        p.mbr[1][1] += deg;
        p.mbr[2][0] += deg;
        p.mbr[2][1] += deg;
        p.mbr[3][0] += deg;
        p.mbr[3][1] -= deg;
    }
    db
}

#[test]
fn extraction_counts_match_event_log() {
    // noise-free, one rider per tram: every event covered by the rider's
    // time span must produce exactly one sample
    let config = SimConfig {
        seed: 5,
        rider_trips: 12,
        noise: NoiseProfile::none(),
        ..SimConfig::default()
    };
    let out = sim::simulate(&config).unwrap();
    let db = widened_truth_db(&out.truth, 8.0);
    let extraction = timing::extract_delay_samples(
        &out.traces,
        &db,
        &out.network,
        &StationConfig::default(),
        EARTH,
    );

    // expected counts per element, as an interval: dwell events near the
    // 8 s stationary minimum measure one sample shorter than drawn, so
    // they may or may not be detected; a travel sample additionally needs
    // both of its bounding dwells detected
    let mut surely: BTreeMap<(DelayKind, String), usize> = BTreeMap::new();
    let mut possibly: BTreeMap<(DelayKind, String), usize> = BTreeMap::new();
    for (log, trace) in out.truth.trips.iter().zip(&out.traces) {
        let (t0, t1) = trace.time_span_ms().unwrap();
        let in_span = |e: &sim::TripEvent| e.t_start_ms >= t0 - 1000 && e.t_end_ms <= t1 + 1000;
        let dwell_lo = |e: &sim::TripEvent| e.t_end_ms - e.t_start_ms >= 10_000;
        let dwell_hi = |e: &sim::TripEvent| e.t_end_ms - e.t_start_ms >= 7_000;
        for (i, e) in log.events.iter().enumerate() {
            if !in_span(e) {
                continue;
            }
            let key = (e.kind, e.element_ref.clone());
            match e.kind {
                DelayKind::StationDelay | DelayKind::TrafficDelay => {
                    if dwell_lo(e) {
                        *surely.entry(key.clone()).or_default() += 1;
                    }
                    if dwell_hi(e) {
                        *possibly.entry(key).or_default() += 1;
                    }
                }
                DelayKind::SegmentTime | DelayKind::LegTime => {
                    let prev = log.events[..i].iter().rev().find(|d| {
                        matches!(d.kind, DelayKind::StationDelay | DelayKind::TrafficDelay)
                    });
                    let next = log.events[i + 1..].iter().find(|d| {
                        matches!(d.kind, DelayKind::StationDelay | DelayKind::TrafficDelay)
                    });
                    let (Some(prev), Some(next)) = (prev, next) else { continue };
                    if !(in_span(prev) && in_span(next)) {
                        continue;
                    }
                    if dwell_lo(prev) && dwell_lo(next) {
                        *surely.entry(key.clone()).or_default() += 1;
                    }
                    if dwell_hi(prev) && dwell_hi(next) {
                        *possibly.entry(key).or_default() += 1;
                    }
                }
                DelayKind::BufferingDelay => {}
            }
        }
    }

    let mut got: BTreeMap<(DelayKind, String), usize> = BTreeMap::new();
    for s in &extraction.samples {
        got.insert((s.kind, s.element_ref.to_string()), s.samples.len());
    }

    for (key, hi) in &possibly {
        let lo = surely.get(key).copied().unwrap_or(0);
        let have = got.get(key).copied().unwrap_or(0);
        assert!(
            (lo..=*hi).contains(&have),
            "{key:?}: extracted {have}, event log bounds [{lo}, {hi}]"
        );
    }
    // and nothing extracted beyond what the log explains
    for (key, have) in &got {
        let hi = possibly.get(key).copied().unwrap_or(0);
        assert!(have <= &hi, "{key:?}: extracted {have} exceeds log bound {hi}");
    }
    // skipped transitions only arise from undetected boundary dwells
    let boundary_dwells: usize = possibly
        .iter()
        .filter(|((k, _), _)| matches!(k, DelayKind::StationDelay | DelayKind::TrafficDelay))
        .map(|(key, hi)| hi - surely.get(key).copied().unwrap_or(0))
        .sum();
    assert!(
        extraction.skipped_transitions <= 2 * boundary_dwells,
        "{} transitions skipped with only {boundary_dwells} boundary dwells",
        extraction.skipped_transitions
    );
}

#[test]
fn noise_free_detection_is_perfect_at_shipped_parameters() {
    let config = SimConfig {
        seed: 41,
        rider_trips: 24,
        noise: NoiseProfile::none(),
        ..SimConfig::default()
    };
    let out = sim::simulate(&config).unwrap();
    let reports =
        preprocess::preprocess_batch(&out.traces, &PreprocessConfig::per_trace_1hz()).unwrap();
    assert!(reports.iter().all(|(_, r)| r.retention_ratio == Some(1.0)));
    let cleaned: Vec<Trace> = reports.into_iter().map(|(t, _)| t).collect();
    let detection = discover_stop_places(&cleaned, &StationConfig::default(), EARTH);
    let detected: Vec<GeoCoord> = detection
        .places
        .iter()
        .filter(|p| p.kind == StopKind::Station)
        .map(|p| p.centroid())
        .collect();
    let m = cluster::match_centroids(&detected, &sim::truth_centroids(&out.truth), 0.0003);
    assert_eq!(m.recall, 1.0);
    assert_eq!(m.precision, 1.0);
    assert_eq!(m.fpr, 0.0);
}

#[test]
fn injected_buffering_is_recovered() {
    let config = SimConfig {
        seed: 6,
        rider_trips: 20,
        noise: NoiseProfile::none(),
        buffering: Some(BufferingSpec { prob: 0.4, ..Default::default() }),
        ..SimConfig::default()
    };
    let out = sim::simulate(&config).unwrap();
    let db = widened_truth_db(&out.truth, 8.0);

    let mut injected = 0usize;
    let mut recovered = 0usize;
    for (log, trace) in out.truth.trips.iter().zip(&out.traces) {
        let intervals = detect_stationary(trace, 0.5, 8.0, EARTH);
        let buffering = detect_buffering(&intervals, &db, 150.0, EARTH);
        for e in log.events.iter().filter(|e| e.kind == DelayKind::BufferingDelay) {
            injected += 1;
            let hit = buffering.iter().any(|b| {
                let interval = &intervals[b.interval_index];
                b.station_id == e.element_ref
                    && (interval.t_start_ms - e.t_start_ms).abs() <= 2000
            });
            if hit {
                recovered += 1;
            }
        }
        // no interval inside a station MBR is ever labeled buffering
        for b in &buffering {
            let c = intervals[b.interval_index].centroid;
            assert!(db.stations().all(|s| !s.contains(c)));
        }
    }
    assert!(injected > 20, "expected a healthy number of injected events, got {injected}");
    let rate = recovered as f64 / injected as f64;
    assert!(rate >= 0.9, "recovered {recovered}/{injected} = {rate}");
}

#[test]
fn sweep_recovers_an_operating_point_on_default_noise() {
    let config = SimConfig { seed: 8, ..SimConfig::default() };
    let out = sim::simulate(&config).unwrap();
    let cleaned = clean(&out.traces);
    // stationary points are what station detection clusters
    let mut points = Vec::new();
    for trace in &cleaned {
        for interval in detect_stationary(trace, 0.5, 8.0, EARTH) {
            points.extend(interval.coords);
        }
    }
    let truth = sim::truth_centroids(&out.truth);
    let outcome = cluster::sweep_parameters(
        &points,
        &truth,
        &[25, 50, 100, 200],
        &[0.0001, 0.0002, 0.0003, 0.0004, 0.0005],
        &[0.0002, 0.0003, 0.0004, 0.0005],
        cluster::Metric::DegreeEuclidean,
        EARTH,
    )
    .unwrap();
    assert_eq!(outcome.points.len(), 4 * 5 * 4);
    assert!(
        outcome.chosen.outcome.tpr >= 0.95,
        "chosen point TPR {} at {:?}",
        outcome.chosen.outcome.tpr,
        (outcome.chosen.minpts, outcome.chosen.eps_deg, outcome.chosen.dt_deg)
    );
    // the shipped defaults evaluate well on this data too
    let shipped = outcome
        .points
        .iter()
        .find(|p| p.minpts == 100 && p.eps_deg == 0.0002 && p.dt_deg == 0.0003)
        .unwrap();
    assert!(shipped.outcome.tpr >= 0.95, "shipped point TPR {}", shipped.outcome.tpr);
    let csv = outcome.roc_csv();
    assert_eq!(csv.lines().count(), 1 + 80);
}

/// End-to-end fixture: simulate, detect, align, fit.
struct Fitted {
    out: sim::SimOutput,
    db: StationsDb,
    aligned: railtrace_core::network::TransitNetwork,
    store: DelayStore,
}

fn fit_fixture(seed: u64, trips: usize) -> Fitted {
    let config = SimConfig { seed, rider_trips: trips, ..SimConfig::default() };
    let out = sim::simulate(&config).unwrap();
    let cleaned = clean(&out.traces);
    let detection = discover_stop_places(&cleaned, &StationConfig::default(), EARTH);
    let db = StationsDb::from_places(detection.places).unwrap();
    let truth_coords: BTreeMap<String, GeoCoord> = out
        .truth
        .places
        .iter()
        .map(|p| (p.id.clone(), GeoCoord { lat: p.lat, lon: p.lon }))
        .collect();
    let detected: Vec<(String, GeoCoord)> =
        db.places.iter().map(|p| (p.id.clone(), p.centroid())).collect();
    let (aligned, dropped) = out.network.rekey_places(&truth_coords, &detected, 0.0003);
    assert!(dropped.is_empty(), "dropped {dropped:?}");
    let extraction =
        timing::extract_delay_samples(&cleaned, &db, &aligned, &StationConfig::default(), EARTH);
    let store = timing::fit_all(&extraction.samples, &TimingConfig::default());
    Fitted { out, db, aligned, store }
}

#[test]
fn vehicle_view_at_source_station_equals_full_plan() {
    let f = fit_fixture(31, 64);
    let model = NetworkModel::new(&f.aligned, &f.db, EARTH);
    let config = TimingConfig::default();
    let line = &f.aligned.lines[0];
    let source = line.places[0].clone();
    let destination = line.places[4].clone();

    let full_plan = model
        .plan_between(&line.id, Direction::WestToEast, &source, &destination)
        .unwrap();
    let full = timing::trip_time(&full_plan, &f.store, &config).unwrap();

    let query = VehicleQuery {
        position: f.db.get(&source).unwrap().centroid(),
        destination: destination.clone(),
        direction: Direction::WestToEast,
        line_hint: Some(line.id.clone()),
    };
    let at_station = timing::eta_vehicle_view(&query, &model, &f.store, &config).unwrap();
    assert_eq!(at_station.expected_s, full.expected_s);
    assert_eq!(at_station.sigma_s, full.sigma_s);

    // destination dwell never contributes: plans ending at each
    // intermediate station never reference that station's dwell
    for dest in line.places.iter().skip(1) {
        let plan = model.plan_between(&line.id, Direction::WestToEast, &source, dest).unwrap();
        assert!(
            !plan.terms.iter().any(|t| t.kind == DelayKind::StationDelay
                && t.element_ref == ElementRef::Place(dest.clone())),
            "plan to {dest} contains its own dwell"
        );
    }
}

#[test]
fn vehicle_view_halfway_prorates_the_edge() {
    let f = fit_fixture(32, 64);
    let model = NetworkModel::new(&f.aligned, &f.db, EARTH);
    let config = TimingConfig::default();
    let line = &f.aligned.lines[0];

    // halfway along the first edge by arc distance
    let a = f.db.get(&line.places[0]).unwrap().centroid();
    let b = f.db.get(&line.places[1]).unwrap().centroid();
    let (_, arc_a) = railtrace_core::network::project_onto_polyline(a, &line.polyline, EARTH);
    let (_, arc_b) = railtrace_core::network::project_onto_polyline(b, &line.polyline, EARTH);
    let proj = railtrace_core::geo::LocalProjection::new(line.polyline[0], EARTH);
    let mid_arc = 0.5 * (arc_a + arc_b);
    // walk the polyline to the midpoint arc
    let mut acc = 0.0;
    let mut midpoint = line.polyline[0];
    for w in line.polyline.windows(2) {
        let (x0, y0) = proj.to_xy(w[0]);
        let (x1, y1) = proj.to_xy(w[1]);
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        if acc + len >= mid_arc {
            let t = (mid_arc - acc) / len;
            midpoint = proj.to_coord(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            break;
        }
        acc += len;
    }

    let query = VehicleQuery {
        position: midpoint,
        destination: line.places[2].clone(),
        direction: Direction::WestToEast,
        line_hint: Some(line.id.clone()),
    };
    let plan = timing::plan_vehicle_view(&query, &model, &config).unwrap();
    let first = &plan.terms[0];
    assert_eq!(
        first.element_ref,
        ElementRef::Edge(line.places[0].clone(), line.places[1].clone())
    );
    assert!(
        (first.coeff - 0.5).abs() < 0.02,
        "expected coefficient ~0.5, got {}",
        first.coeff
    );
    // all later terms are whole
    assert!(plan.terms[1..].iter().all(|t| t.coeff == 1.0));
}

#[test]
fn station_view_takes_the_soonest_tram_and_reports_no_candidates() {
    let f = fit_fixture(33, 64);
    let model = NetworkModel::new(&f.aligned, &f.db, EARTH);
    let config = TimingConfig::default();
    let line = &f.aligned.lines[0];
    let station = line.places[5].clone();

    let near = f.db.get(&line.places[4]).unwrap().centroid();
    let far = f.db.get(&line.places[1]).unwrap().centroid();
    let live = vec![
        LiveTram {
            id: "tram-far".into(),
            position: far,
            direction: Direction::WestToEast,
            line_hint: Some(line.id.clone()),
        },
        LiveTram {
            id: "tram-near".into(),
            position: near,
            direction: Direction::WestToEast,
            line_hint: Some(line.id.clone()),
        },
    ];
    let (winner, est) =
        timing::eta_station_view(&station, &live, &model, &f.store, &config).unwrap();
    assert_eq!(winner, "tram-near");
    assert!(est.expected_s > 0.0);

    // one tram only: equals its own vehicle view
    let solo = timing::eta_station_view(&station, &live[1..], &model, &f.store, &config).unwrap();
    let direct = timing::eta_vehicle_view(
        &VehicleQuery {
            position: near,
            destination: station.clone(),
            direction: Direction::WestToEast,
            line_hint: Some(line.id.clone()),
        },
        &model,
        &f.store,
        &config,
    )
    .unwrap();
    assert_eq!(solo.1.expected_s, direct.expected_s);

    // no candidates at all: explicit error
    let err = timing::eta_station_view(&station, &[], &model, &f.store, &config).unwrap_err();
    assert!(matches!(err, railtrace_core::Error::NoUpcomingArrival(_)));

    // trams past the station (wrong side) cannot arrive
    let past = f.db.get(&line.places[8]).unwrap().centroid();
    let wrong_side = vec![LiveTram {
        id: "tram-past".into(),
        position: past,
        direction: Direction::WestToEast,
        line_hint: Some(line.id.clone()),
    }];
    assert!(timing::eta_station_view(&station, &wrong_side, &model, &f.store, &config).is_err());
}

#[test]
fn coverage_with_true_generators_is_nominal() {
    // plans priced from the true generating normals: realized trip times
    // must land in the 95% interval at the nominal rate
    let config = SimConfig { seed: 17, rider_trips: 0, ..SimConfig::default() };
    let out_net = sim::network_of(&config, EARTH).unwrap();
    let truth = sim::simulate(&SimConfig { rider_trips: 0, ..config.clone() }).unwrap().truth;

    let mut store = DelayStore::new();
    for g in &truth.generators {
        store.insert(DelayDistribution {
            kind: g.kind,
            element_ref: ElementRef::parse(&g.element_ref),
            mu_s: g.mu_s,
            sigma2_s2: g.sigma_s * g.sigma_s,
            n: 1000,
            eff_weight: 1000.0,
            ks: None,
            degenerate: false,
            version: 1,
        });
    }
    let db = truth_db(&truth);
    let model = NetworkModel::new(&out_net, &db, EARTH);
    let timing_config = TimingConfig::default();

    let logs = sim::simulate_event_logs(&config, 2200, 99).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut covered = 0usize;
    let mut total = 0usize;
    for log in &logs {
        let line = out_net.line(&log.line_id).unwrap();
        let n = line.places.len();
        let stations: Vec<usize> = (0..n)
            .filter(|&pos| {
                let idx = if log.forward { pos } else { n - 1 - pos };
                truth.places.iter().any(|p| p.id == line.places[idx] && p.kind == StopKind::Station)
            })
            .collect();
        let a = rng.random_range(0..stations.len() - 1);
        let b = rng.random_range(a + 1..stations.len());
        let (sa, sb) = (stations[a], stations[b]);
        let realized = (log.arrivals[sb].1 - log.arrivals[sa].1) as f64 / 1000.0;
        let direction = if log.forward { Direction::WestToEast } else { Direction::EastToWest };
        let src = if log.forward { &line.places[sa] } else { &line.places[n - 1 - sa] };
        let dst = if log.forward { &line.places[sb] } else { &line.places[n - 1 - sb] };
        let plan = model.plan_between(&log.line_id, direction, src, dst).unwrap();
        let est = timing::trip_time(&plan, &store, &timing_config).unwrap();
        total += 1;
        if realized >= est.interval_lo_s && realized <= est.interval_hi_s {
            covered += 1;
        }
    }
    let coverage = covered as f64 / total as f64;
    assert!(total >= 2000);
    assert!(
        (coverage - 0.95).abs() <= 0.03,
        "coverage {coverage} not within 0.95 +- 0.03 ({covered}/{total})"
    );
}

#[test]
fn shipped_cluster_defaults_match_the_published_operating_point() {
    let params = cluster::ClusterParams::default();
    assert_eq!(params.minpts, 100);
    assert_eq!(params.eps_deg, 0.0002);
    assert_eq!(params.dt_deg, 0.0003);
}
