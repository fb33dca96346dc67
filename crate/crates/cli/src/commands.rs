use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use railtrace_core::cluster::{self, Metric, TruthCentroid};
use railtrace_core::geo::{EarthModel, GeoCoord};
use railtrace_core::network::{Direction, TransitNetwork};
use railtrace_core::preprocess::{self, PreprocessReport};
use railtrace_core::sim::{self, GroundTruth, SimConfig};
use railtrace_core::stations::{
    detect_stationary, discover_stop_places, StationsDb, StopKind,
};
use railtrace_core::timing::{self, DelayStore, LiveTram, NetworkModel, VehicleQuery};
use railtrace_core::trace::{self, Trace};

use crate::config::FileConfig;

const EARTH: EarthModel = EarthModel { radius_km: 6373.0 };

fn load_traces(inputs: &[PathBuf]) -> anyhow::Result<Vec<Trace>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    let mut traces = Vec::new();
    for file in &files {
        let (parsed, report) = trace::parse_trace_file(file)
            .with_context(|| format!("parsing {}", file.display()))?;
        if report.bad_lines > 0 {
            eprintln!(
                "note: {} malformed line(s) skipped in {} (lines {:?})",
                report.bad_lines,
                file.display(),
                report.bad_line_numbers
            );
        }
        traces.extend(parsed);
    }
    Ok(traces)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Optional JSON config (the `sim` section drives the generator).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for traces/, ground_truth.json, network.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of rider trips.
    #[arg(long)]
    trips: Option<usize>,
}

pub fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut config = file.sim();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trips) = args.trips {
        config.rider_trips = trips;
    }
    let out = sim::simulate(&config)?;
    std::fs::create_dir_all(&args.out)?;
    sim::write_outputs(&out, &args.out)?;
    let points: usize = out.traces.iter().map(|t| t.points.len()).sum();
    println!(
        "simulated {} trips ({} points) over {} places; outputs in {}",
        out.traces.len(),
        points,
        out.truth.places.len(),
        args.out.display()
    );
    Ok(())
}

// -------------------------------------------------------------- preprocess

#[derive(Args)]
pub struct PreprocessArgs {
    /// Trace CSV files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Cleaned traces, one CSV.
    #[arg(long)]
    out: PathBuf,
    /// JSON cleaning report.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn preprocess(args: PreprocessArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let config = file.preprocess();
    let traces = load_traces(&args.input)?;
    let results = preprocess::preprocess_batch(&traces, &config)?;

    let cleaned: Vec<Trace> = results.iter().map(|(t, _)| t.clone()).collect();
    trace::write_trace_file(&args.out, &cleaned)?;

    let input_points: usize = results.iter().map(|(_, r)| r.input_points).sum();
    let output_points: usize = results.iter().map(|(_, r)| r.output_points).sum();
    let overall = if input_points == 0 {
        None
    } else {
        Some(output_points as f64 / input_points as f64)
    };
    let per_trace: Vec<(&str, &PreprocessReport)> = results
        .iter()
        .map(|(t, r)| (t.device_id.as_str(), r))
        .collect();
    let report = json!({
        "config": config,
        "traces": results.len(),
        "input_points": input_points,
        "output_points": output_points,
        "retention_ratio": overall,
        "retention_undefined": overall.is_none(),
        "per_trace": per_trace.iter().map(|(id, r)| json!({"device_id": id, "report": r})).collect::<Vec<_>>(),
    });
    write_json(&args.report, &report)?;
    match overall {
        Some(r) => println!(
            "cleaned {} traces: {} -> {} points (retention {r:.4})",
            results.len(),
            input_points,
            output_points
        ),
        None => println!("no input points; retention undefined"),
    }
    Ok(())
}

// ------------------------------------------------------------------- sweep

#[derive(Args)]
pub struct SweepArgs {
    /// Trace CSV files or directories (cleaned internally).
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Ground-truth JSON (the simulator's ground_truth.json, or an array
    /// of {kind, lat, lon} records).
    #[arg(long)]
    truth: PathBuf,
    /// SweepOutcome JSON.
    #[arg(long)]
    out: PathBuf,
    /// Plot-ready ROC CSV.
    #[arg(long)]
    roc: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated grid overrides.
    #[arg(long, value_delimiter = ',')]
    minpts: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    dt: Vec<f64>,
}

#[derive(Deserialize)]
struct BareTruthPlace {
    kind: StopKind,
    lat: f64,
    lon: f64,
}

fn load_truth_centroids(path: &Path) -> anyhow::Result<Vec<TruthCentroid>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(truth) = serde_json::from_str::<GroundTruth>(&text) {
        return Ok(sim::truth_centroids(&truth));
    }
    let bare: Vec<BareTruthPlace> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {} as ground truth", path.display()))?;
    Ok(bare
        .into_iter()
        .map(|p| TruthCentroid {
            coord: GeoCoord { lat: p.lat, lon: p.lon },
            is_station: p.kind == StopKind::Station,
        })
        .collect())
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut grid = file.sweep();
    if !args.minpts.is_empty() {
        grid.minpts = args.minpts.clone();
    }
    if !args.eps.is_empty() {
        grid.eps_deg = args.eps.clone();
    }
    if !args.dt.is_empty() {
        grid.dt_deg = args.dt.clone();
    }
    let truth = load_truth_centroids(&args.truth)?;
    let traces = load_traces(&args.traces)?;
    let cleaned = preprocess::preprocess_batch(&traces, &file.preprocess())?;
    let station_config = file.stations();
    let mut points = Vec::new();
    for (t, _) in &cleaned {
        for interval in
            detect_stationary(t, station_config.v_thresh_mps, station_config.min_dwell_s, EARTH)
        {
            points.extend(interval.coords);
        }
    }
    let outcome = cluster::sweep_parameters(
        &points,
        &truth,
        &grid.minpts,
        &grid.eps_deg,
        &grid.dt_deg,
        Metric::DegreeEuclidean,
        EARTH,
    )?;
    std::fs::write(&args.roc, outcome.roc_csv())
        .with_context(|| format!("writing {}", args.roc.display()))?;
    write_json(&args.out, &serde_json::to_value(&outcome)?)?;
    let chosen = &outcome.chosen;
    println!(
        "swept {} grid points over {} stationary points; chosen minpts={} eps={} dt={} (tpr {:.4}, fpr {:.4})",
        outcome.points.len(),
        points.len(),
        chosen.minpts,
        chosen.eps_deg,
        chosen.dt_deg,
        chosen.outcome.tpr,
        chosen.outcome.fpr
    );
    Ok(())
}

// --------------------------------------------------------- detect-stations

#[derive(Args)]
pub struct DetectStationsArgs {
    /// Cleaned trace CSV files or directories.
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Stations database JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Upsert into an existing database instead of overwriting.
    #[arg(long)]
    merge: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Treat inputs as raw traces and clean them first.
    #[arg(long)]
    clean_first: bool,
}

pub fn detect_stations(args: DetectStationsArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut traces = load_traces(&args.traces)?;
    if args.clean_first {
        traces = preprocess::preprocess_batch(&traces, &file.preprocess())?
            .into_iter()
            .map(|(t, _)| t)
            .collect();
    }
    let station_config = file.stations();
    let detection = discover_stop_places(&traces, &station_config, EARTH);

    let db = if args.merge && args.out.exists() {
        let mut db = StationsDb::load(&args.out)?;
        for place in &detection.places {
            db.upsert(place, station_config.cluster.dt_deg);
        }
        db
    } else {
        StationsDb::from_places(detection.places.clone())?
    };
    db.save(&args.out)?;

    println!("{:<10} {:<14} {:>10} {:>8} {:>12} {:>14}", "id", "kind", "visits", "dwell_s", "platform_m", "low_confidence");
    for p in &db.places {
        println!(
            "{:<10} {:<14} {:>10} {:>8.1} {:>12} {:>14}",
            p.id,
            match p.kind {
                StopKind::Station => "station",
                StopKind::TrafficLight => "traffic_light",
            },
            p.visit_count,
            p.median_dwell_s,
            p.platform_length_m.map_or("-".to_string(), |l| format!("{l:.1}")),
            if p.low_confidence { "yes" } else { "" }
        );
    }
    println!(
        "{} places ({} stations, {} lights) -> {}",
        db.places.len(),
        db.places.iter().filter(|p| p.kind == StopKind::Station).count(),
        db.places.iter().filter(|p| p.kind == StopKind::TrafficLight).count(),
        args.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- fit-delays

#[derive(Args)]
pub struct FitDelaysArgs {
    /// Cleaned trace CSV files or directories.
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Stations database JSON.
    #[arg(long)]
    stations: PathBuf,
    /// Network JSON (place ids must match the stations database).
    #[arg(long)]
    network: PathBuf,
    /// Distribution store JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Fold new samples into an existing store with this decay factor
    /// (1.0 = exact pooling) instead of refitting from scratch.
    #[arg(long)]
    update_lambda: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clean_first: bool,
}

pub fn fit_delays(args: FitDelaysArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut traces = load_traces(&args.traces)?;
    if args.clean_first {
        traces = preprocess::preprocess_batch(&traces, &file.preprocess())?
            .into_iter()
            .map(|(t, _)| t)
            .collect();
    }
    let db = StationsDb::load(&args.stations)?;
    let network = TransitNetwork::load(&args.network)?;
    let timing_config = file.timing();
    let extraction =
        timing::extract_delay_samples(&traces, &db, &network, &file.stations(), EARTH);

    let store = match args.update_lambda {
        Some(lambda) => {
            let mut store = DelayStore::bootstrap(&args.out)?;
            for s in &extraction.samples {
                store.apply_batch(s.kind, s.element_ref.clone(), &s.samples, lambda, &timing_config)?;
            }
            store
        }
        None => timing::fit_all(&extraction.samples, &timing_config),
    };
    store.save(&args.out)?;

    let eligible = store.iter().filter(|d| d.eligible(timing_config.n_min)).count();
    let ks_pass = store.iter().filter(|d| d.ks.is_some_and(|k| k.pass)).count();
    println!(
        "fitted {} elements ({} query-eligible, {} KS-pass) from {} samples; {} intervals and {} transitions skipped -> {}",
        store.len(),
        eligible,
        ks_pass,
        extraction.samples.iter().map(|s| s.samples.len()).sum::<usize>(),
        extraction.skipped_intervals,
        extraction.skipped_transitions,
        args.out.display()
    );
    Ok(())
}

// -------------------------------------------------------------------- eta

#[derive(Args)]
pub struct EtaArgs {
    /// Distribution store JSON.
    #[arg(long)]
    delays: PathBuf,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    /// Query JSON; see the README for the schema.
    #[arg(long)]
    query: PathBuf,
    /// Also write the estimate as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
enum EtaQuery {
    Vehicle {
        lat: f64,
        lon: f64,
        destination: String,
        direction: Direction,
        #[serde(default)]
        line: Option<String>,
    },
    Station {
        station: String,
        trams: Vec<TramPosition>,
    },
}

#[derive(Deserialize)]
struct TramPosition {
    id: String,
    lat: f64,
    lon: f64,
    direction: Direction,
    #[serde(default)]
    line: Option<String>,
}

pub fn eta(args: EtaArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    if !args.delays.exists() {
        bail!("distribution store not found: {}", args.delays.display());
    }
    let store = DelayStore::load(&args.delays)?;
    let network = TransitNetwork::load(&args.network)?;
    let db = StationsDb::load(&args.stations)?;
    let model = NetworkModel::new(&network, &db, EARTH);
    let timing_config = file.timing();

    let query_text = std::fs::read_to_string(&args.query)
        .with_context(|| format!("reading {}", args.query.display()))?;
    let query: EtaQuery = serde_json::from_str(&query_text)
        .with_context(|| format!("parsing {}", args.query.display()))?;

    let (label, estimate) = match query {
        EtaQuery::Vehicle { lat, lon, destination, direction, line } => {
            let q = VehicleQuery {
                position: GeoCoord::new(lat, lon)?,
                destination: destination.clone(),
                direction,
                line_hint: line,
            };
            let est = timing::eta_vehicle_view(&q, &model, &store, &timing_config)?;
            (format!("arrival at {destination}"), est)
        }
        EtaQuery::Station { station, trams } => {
            let live: Vec<LiveTram> = trams
                .into_iter()
                .map(|t| {
                    Ok(LiveTram {
                        id: t.id,
                        position: GeoCoord::new(t.lat, t.lon)?,
                        direction: t.direction,
                        line_hint: t.line,
                    })
                })
                .collect::<anyhow::Result<_>>()?;
            let (tram, est) =
                timing::eta_station_view(&station, &live, &model, &store, &timing_config)?;
            (format!("next tram at {station}: {tram}"), est)
        }
    };

    println!(
        "{label}: expected {:.1} s (sigma {:.1} s, 95% interval [{:.1}, {:.1}] s)",
        estimate.expected_s, estimate.sigma_s, estimate.interval_lo_s, estimate.interval_hi_s
    );
    if let Some(out) = &args.out {
        write_json(out, &serde_json::to_value(estimate)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------- distributions

#[derive(Args)]
pub struct DistributionsArgs {
    /// Distribution store JSON.
    #[arg(long)]
    delays: PathBuf,
    /// CSV of kind,element_ref,x_s,pdf,cdf rows.
    #[arg(long)]
    out: PathBuf,
    /// Grid points per element.
    #[arg(long, default_value_t = 129)]
    points: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn distributions(args: DistributionsArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    if !args.delays.exists() {
        bail!("distribution store not found: {}", args.delays.display());
    }
    let store = DelayStore::load(&args.delays)?;
    let csv = timing::distribution_grid_csv(&store, &file.timing(), args.points.max(2));
    std::fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} grid rows -> {}", csv.lines().count() - 1, args.out.display());
    Ok(())
}

// ---------------------------------------------------------------- pipeline

#[derive(Args)]
pub struct PipelineArgs {
    /// Output directory for every stage artifact.
    #[arg(long)]
    out: PathBuf,
    /// Existing trace files or directories; when omitted the embedded
    /// simulator provides input (and ground truth for scoring).
    #[arg(long, num_args = 0..)]
    traces: Vec<PathBuf>,
    /// Ground-truth JSON for scoring externally supplied traces.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Network JSON (defaults to the simulator's network when simulating).
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trips: Option<usize>,
}

#[derive(Serialize)]
struct PipelineReport {
    config: serde_json::Value,
    retention_ratio: Option<f64>,
    stations_detected: usize,
    lights_detected: usize,
    station_recall: Option<f64>,
    station_precision: Option<f64>,
    platform_mean_rel_error: Option<f64>,
    fits: Vec<FitRow>,
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct FitRow {
    kind: timing::DelayKind,
    element_ref: String,
    mu_s: f64,
    sigma2_s2: f64,
    n: u64,
    ks_pass: Option<bool>,
}

pub fn pipeline(args: PipelineArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    std::fs::create_dir_all(&args.out)?;
    let mut artifacts: BTreeMap<String, String> = BTreeMap::new();

    // stage 0: input traces (+ truth/network when simulating)
    let (raw, truth, network): (Vec<Trace>, Option<GroundTruth>, Option<TransitNetwork>) =
        if args.traces.is_empty() {
            let mut sim_config: SimConfig = file.sim();
            if let Some(seed) = args.seed {
                sim_config.seed = seed;
            }
            if let Some(trips) = args.trips {
                sim_config.rider_trips = trips;
            }
            let out = sim::simulate(&sim_config)?;
            sim::write_outputs(&out, &args.out)?;
            artifacts.insert("traces".into(), args.out.join("traces").display().to_string());
            artifacts.insert(
                "ground_truth".into(),
                args.out.join("ground_truth.json").display().to_string(),
            );
            (out.traces, Some(out.truth), Some(out.network))
        } else {
            let raw = load_traces(&args.traces)?;
            let truth = match &args.truth {
                Some(path) => Some(GroundTruth::load(path)?),
                None => None,
            };
            let network = match &args.network {
                Some(path) => Some(TransitNetwork::load(path)?),
                None => None,
            };
            (raw, truth, network)
        };

    // stage 1: preprocess
    let preprocess_config = file.preprocess();
    let results = preprocess::preprocess_batch(&raw, &preprocess_config)?;
    let cleaned: Vec<Trace> = results.iter().map(|(t, _)| t.clone()).collect();
    let cleaned_path = args.out.join("cleaned.csv");
    trace::write_trace_file(&cleaned_path, &cleaned)?;
    artifacts.insert("cleaned".into(), cleaned_path.display().to_string());
    let input_points: usize = results.iter().map(|(_, r)| r.input_points).sum();
    let output_points: usize = results.iter().map(|(_, r)| r.output_points).sum();
    let retention =
        (input_points > 0).then(|| output_points as f64 / input_points as f64);

    // stage 2: stations
    let station_config = file.stations();
    let detection = discover_stop_places(&cleaned, &station_config, EARTH);
    let db = StationsDb::from_places(detection.places.clone())?;
    let db_path = args.out.join("stations.json");
    db.save(&db_path)?;
    artifacts.insert("stations".into(), db_path.display().to_string());

    // scoring against truth, when available
    let (recall, precision, platform_err) = match &truth {
        Some(truth) => {
            let centroids = sim::truth_centroids(truth);
            let detected: Vec<GeoCoord> = db
                .places
                .iter()
                .filter(|p| p.kind == StopKind::Station)
                .map(|p| p.centroid())
                .collect();
            let m =
                cluster::match_centroids(&detected, &centroids, station_config.cluster.dt_deg);
            let mut errs = Vec::new();
            for tp in truth.places.iter().filter(|p| p.kind == StopKind::Station) {
                let best = db
                    .places
                    .iter()
                    .filter(|p| p.kind == StopKind::Station)
                    .filter_map(|p| p.platform_length_m.map(|l| (p, l)))
                    .min_by(|(a, _), (b, _)| {
                        let da = (a.lat - tp.lat).powi(2) + (a.lon - tp.lon).powi(2);
                        let db_ = (b.lat - tp.lat).powi(2) + (b.lon - tp.lon).powi(2);
                        da.partial_cmp(&db_).unwrap()
                    });
                if let Some((_, est)) = best {
                    errs.push((est - tp.platform_length_m).abs() / tp.platform_length_m);
                }
            }
            let mean_err = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            (Some(m.recall), Some(m.precision), mean_err)
        }
        None => (None, None, None),
    };

    // stage 3: delays (needs a network keyed to the detected db)
    let aligned_network: Option<TransitNetwork> = match (&network, &truth) {
        (Some(net), Some(truth)) => {
            let truth_coords: BTreeMap<String, GeoCoord> = truth
                .places
                .iter()
                .map(|p| (p.id.clone(), GeoCoord { lat: p.lat, lon: p.lon }))
                .collect();
            let detected: Vec<(String, GeoCoord)> =
                db.places.iter().map(|p| (p.id.clone(), p.centroid())).collect();
            let (aligned, dropped) =
                net.rekey_places(&truth_coords, &detected, station_config.cluster.dt_deg);
            if !dropped.is_empty() {
                eprintln!("note: {} network place(s) had no detected counterpart: {dropped:?}", dropped.len());
            }
            let aligned_path = args.out.join("network.aligned.json");
            aligned.save(&aligned_path)?;
            artifacts.insert("network".into(), aligned_path.display().to_string());
            Some(aligned)
        }
        // hand-authored networks already reference db ids
        (Some(net), None) => Some(net.clone()),
        _ => None,
    };

    let fits = aligned_network.map(|aligned| {
        let timing_config = file.timing();
        let extraction =
            timing::extract_delay_samples(&cleaned, &db, &aligned, &station_config, EARTH);
        let store = timing::fit_all(&extraction.samples, &timing_config);
        (store, extraction)
    });

    let mut fit_rows = Vec::new();
    if let Some((store, _)) = &fits {
        let delays_path = args.out.join("delays.json");
        store.save(&delays_path)?;
        artifacts.insert("delays".into(), delays_path.display().to_string());
        for d in store.iter() {
            fit_rows.push(FitRow {
                kind: d.kind,
                element_ref: d.element_ref.to_string(),
                mu_s: d.mu_s,
                sigma2_s2: d.sigma2_s2,
                n: d.n,
                ks_pass: d.ks.map(|k| k.pass),
            });
        }
    }

    let report = PipelineReport {
        config: json!({
            "preprocess": preprocess_config,
            "stations": station_config,
            "timing": file.timing(),
            "sim": args.traces.is_empty().then(|| file.sim()),
        }),
        retention_ratio: retention,
        stations_detected: db.places.iter().filter(|p| p.kind == StopKind::Station).count(),
        lights_detected: db
            .places
            .iter()
            .filter(|p| p.kind == StopKind::TrafficLight)
            .count(),
        station_recall: recall,
        station_precision: precision,
        platform_mean_rel_error: platform_err,
        fits: fit_rows,
        artifacts: artifacts.clone(),
    };
    let report_path = args.out.join("report.json");
    write_json(&report_path, &serde_json::to_value(&report)?)?;

    println!("pipeline complete -> {}", args.out.display());
    if let Some(r) = retention {
        println!("  retention: {r:.4}");
    } else {
        println!("  retention: undefined (no input points)");
    }
    println!(
        "  stations: {} detected ({} lights)",
        report.stations_detected, report.lights_detected
    );
    if let (Some(r), Some(p)) = (recall, precision) {
        println!("  vs truth: recall {r:.4}, precision {p:.4}");
    }
    if let Some(e) = platform_err {
        println!("  platform mean relative error: {:.2}%", e * 100.0);
    }
    println!("  fitted elements: {}", report.fits.len());
    println!("  report: {}", report_path.display());
    Ok(())
}
