//! Data model, file format, and ingestion for rider GPS streams.
//!
//! Trace files are UTF-8 CSV with the header
//! `device_id,t_ms,lat,lon,speed,event`; `speed` (m/s) and `event`
//! (`board`/`alight`) cells may be empty. Timestamps are unix milliseconds
//! UTC. Floats are written in Rust's shortest round-trip form, so
//! `parse(serialize(t)) == t` bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geo::GeoCoord;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "device_id,t_ms,lat,lon,speed,event";

/// Boarding/alighting annotation. These arrive with the trace (the
/// simulator emits them at stations); nothing in this crate infers them
/// from motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardEvent {
    Board,
    Alight,
}

impl BoardEvent {
    fn as_str(self) -> &'static str {
        match self {
            BoardEvent::Board => "board",
            BoardEvent::Alight => "alight",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "board" => Some(BoardEvent::Board),
            "alight" => Some(BoardEvent::Alight),
            _ => None,
        }
    }
}

/// One timestamped GPS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub device_id: String,
    /// Unix milliseconds UTC, > 0.
    pub t_ms: i64,
    pub coord: GeoCoord,
    /// Reported speed in m/s, when the phone provides one.
    pub speed: Option<f64>,
    pub event: Option<BoardEvent>,
}

impl GpsPoint {
    pub fn validate(&self) -> Result<()> {
        if self.t_ms <= 0 {
            return Err(Error::TraceFormat(format!("timestamp {} must be > 0", self.t_ms)));
        }
        if let Some(s) = self.speed {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::TraceFormat(format!("speed {s} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// A time-ordered sequence of fixes from one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub device_id: String,
    pub points: Vec<GpsPoint>,
}

impl Trace {
    pub fn new(device_id: impl Into<String>) -> Self {
        Trace { device_id: device_id.into(), points: Vec::new() }
    }

    /// Points sorted by timestamp, all sharing the trace's device id.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].t_ms < w[0].t_ms {
                return Err(Error::TraceFormat(format!(
                    "trace {} timestamps decrease: {} then {}",
                    self.device_id, w[0].t_ms, w[1].t_ms
                )));
            }
        }
        if let Some(p) = self.points.iter().find(|p| p.device_id != self.device_id) {
            return Err(Error::TraceFormat(format!(
                "point device {} in trace {}",
                p.device_id, self.device_id
            )));
        }
        Ok(())
    }

    pub fn time_span_ms(&self) -> Option<(i64, i64)> {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => Some((a.t_ms, b.t_ms)),
            _ => None,
        }
    }
}

/// Per-file parse outcome: traces plus malformed-line bookkeeping.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseReport {
    pub total_lines: usize,
    pub bad_lines: usize,
    /// 1-based line numbers of rejected lines (capped at 100 entries).
    pub bad_line_numbers: Vec<u64>,
}

fn parse_record(rec: &csv::StringRecord) -> std::result::Result<GpsPoint, String> {
    if rec.len() != 6 {
        return Err(format!("expected 6 fields, got {}", rec.len()));
    }
    let device_id = rec[0].to_string();
    if device_id.is_empty() {
        return Err("empty device_id".into());
    }
    let t_ms: i64 = rec[1].parse().map_err(|e| format!("t_ms: {e}"))?;
    let lat: f64 = rec[2].parse().map_err(|e| format!("lat: {e}"))?;
    let lon: f64 = rec[3].parse().map_err(|e| format!("lon: {e}"))?;
    let coord = GeoCoord::new(lat, lon).map_err(|e| e.to_string())?;
    let speed = if rec[4].is_empty() {
        None
    } else {
        Some(rec[4].parse::<f64>().map_err(|e| format!("speed: {e}"))?)
    };
    let event = if rec[5].is_empty() {
        None
    } else {
        Some(BoardEvent::parse(&rec[5]).ok_or_else(|| format!("unknown event {:?}", &rec[5]))?)
    };
    let point = GpsPoint { device_id, t_ms, coord, speed, event };
    point.validate().map_err(|e| e.to_string())?;
    Ok(point)
}

/// Parse a trace CSV file into one `Trace` per device, points sorted by
/// timestamp. Malformed lines are counted and reported; the file is
/// rejected outright only when more than `max_bad_ratio` of its data lines
/// are bad (default 0.1 via [`parse_trace_file`]).
pub fn parse_trace_file_with_ratio(
    path: impl AsRef<Path>,
    max_bad_ratio: f64,
) -> Result<(Vec<Trace>, ParseReport)> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (traces, report) = parse_trace_str(&content)?;
    if report.total_lines > 0 {
        let ratio = report.bad_lines as f64 / report.total_lines as f64;
        if ratio > max_bad_ratio {
            return Err(Error::BadLineRatio {
                path: path.display().to_string(),
                bad: report.bad_lines,
                total: report.total_lines,
                ratio: max_bad_ratio,
                first_lines: report.bad_line_numbers.iter().take(10).copied().collect(),
            });
        }
    }
    Ok((traces, report))
}

pub fn parse_trace_file(path: impl AsRef<Path>) -> Result<(Vec<Trace>, ParseReport)> {
    parse_trace_file_with_ratio(path, 0.1)
}

/// Parse CSV content (header required). Returns traces keyed by device in
/// lexicographic device order.
pub fn parse_trace_str(content: &str) -> Result<(Vec<Trace>, ParseReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(content.as_bytes());

    let mut by_device: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();
    let mut report = ParseReport::default();

    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.total_lines += 1;
                report.bad_lines += 1;
                if report.bad_line_numbers.len() < 100 {
                    report.bad_line_numbers.push(
                        e.position().map(|p| p.line()).unwrap_or(0),
                    );
                }
                continue;
            }
        };
        report.total_lines += 1;
        match parse_record(&rec) {
            Ok(p) => by_device.entry(p.device_id.clone()).or_default().push(p),
            Err(_) => {
                report.bad_lines += 1;
                if report.bad_line_numbers.len() < 100 {
                    report.bad_line_numbers.push(
                        rec.position().map(|p| p.line()).unwrap_or(0),
                    );
                }
            }
        }
    }

    let traces = by_device
        .into_iter()
        .map(|(device_id, mut points)| {
            points.sort_by_key(|p| p.t_ms);
            Trace { device_id, points }
        })
        .collect();
    Ok((traces, report))
}

fn write_point(out: &mut String, p: &GpsPoint) {
    out.push_str(&p.device_id);
    out.push(',');
    out.push_str(&p.t_ms.to_string());
    out.push(',');
    out.push_str(&p.coord.lat.to_string());
    out.push(',');
    out.push_str(&p.coord.lon.to_string());
    out.push(',');
    if let Some(s) = p.speed {
        out.push_str(&s.to_string());
    }
    out.push(',');
    if let Some(e) = p.event {
        out.push_str(e.as_str());
    }
    out.push('\n');
}

pub fn serialize_traces(traces: &[Trace]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for trace in traces {
        for p in &trace.points {
            write_point(&mut out, p);
        }
    }
    out
}

pub fn write_trace_file(path: impl AsRef<Path>, traces: &[Trace]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(serialize_traces(traces).as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Key for the store: one logical file per device and UTC day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoreKey {
    pub device_id: String,
    /// Days since the unix epoch, UTC.
    pub day: i64,
}

pub fn day_of(t_ms: i64) -> i64 {
    t_ms.div_euclid(86_400_000)
}

/// Outcome of one ingest batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    /// (device, accepted, duplicates) per device in the batch.
    pub per_device: BTreeMap<String, DeviceIngest>,
    pub reordered: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeviceIngest {
    pub accepted: usize,
    pub duplicates: usize,
}

/// Append-only accumulation of traces keyed by `(device_id, day)`.
///
/// Single writer (`&mut self` ingest), many readers; `snapshot` hands out
/// an owned consistent copy. Exact `(device_id, t_ms)` duplicates are
/// dropped and counted, never treated as errors.
#[derive(Debug, Default)]
pub struct TraceStore {
    entries: BTreeMap<StoreKey, Vec<GpsPoint>>,
}

impl TraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_points(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn ingest(&mut self, traces: &[Trace]) -> IngestReport {
        let mut report = IngestReport::default();
        for trace in traces {
            let dev = report.per_device.entry(trace.device_id.clone()).or_default();
            let mut sorted: Vec<&GpsPoint> = trace.points.iter().collect();
            if !sorted.is_sorted_by_key(|p| p.t_ms) {
                report.reordered += 1;
                sorted.sort_by_key(|p| p.t_ms);
            }
            for p in sorted {
                let key = StoreKey { device_id: trace.device_id.clone(), day: day_of(p.t_ms) };
                let bucket = self.entries.entry(key).or_default();
                // Buckets stay sorted, so a binary search finds duplicates.
                let pos = bucket.partition_point(|q| q.t_ms < p.t_ms);
                if bucket.get(pos).is_some_and(|q| q.t_ms == p.t_ms) {
                    dev.duplicates += 1;
                } else {
                    bucket.insert(pos, p.clone());
                    dev.accepted += 1;
                }
            }
        }
        report
    }

    /// Consistent owned snapshot of everything stored for a device.
    pub fn snapshot_device(&self, device_id: &str) -> Trace {
        let mut points = Vec::new();
        for (key, bucket) in &self.entries {
            if key.device_id == device_id {
                points.extend(bucket.iter().cloned());
            }
        }
        points.sort_by_key(|p| p.t_ms);
        Trace { device_id: device_id.to_string(), points }
    }

    pub fn keys(&self) -> impl Iterator<Item = &StoreKey> {
        self.entries.keys()
    }

    /// Persist as one CSV per (device, day): `<root>/<device>/<day>.csv`.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for (key, bucket) in &self.entries {
            let dir = root.join(&key.device_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join(format!("{}.csv", key.day));
            let trace = Trace { device_id: key.device_id.clone(), points: bucket.clone() };
            write_trace_file(&path, std::slice::from_ref(&trace))?;
        }
        Ok(())
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut store = TraceStore::new();
        if !root.exists() {
            return Ok(store);
        }
        let mut files: Vec<PathBuf> = Vec::new();
        for dev_entry in fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))? {
            let dev_entry = dev_entry.map_err(|e| Error::io(root.display().to_string(), e))?;
            if !dev_entry.path().is_dir() {
                continue;
            }
            for f in fs::read_dir(dev_entry.path())
                .map_err(|e| Error::io(dev_entry.path().display().to_string(), e))?
            {
                let f = f.map_err(|e| Error::io(dev_entry.path().display().to_string(), e))?;
                if f.path().extension().is_some_and(|e| e == "csv") {
                    files.push(f.path());
                }
            }
        }
        files.sort();
        for path in files {
            let (traces, _) = parse_trace_file(&path)?;
            store.ingest(&traces);
        }
        Ok(store)
    }
}
