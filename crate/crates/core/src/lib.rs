//! Reconstruction of a light-rail transit system from crowd-sourced rider
//! GPS traces.
//!
//! The pipeline takes raw per-rider GPS streams and recovers the structure
//! of the network (station locations, platform lengths, traffic-light stop
//! places) together with its real-time schedule statistics (per-element
//! delay distributions and trip-time estimates). An embedded synthetic
//! trace generator with full ground truth backs the test suite, since the
//! interesting properties of the pipeline are only checkable against a
//! network whose true geometry and timing are known.
//!
//! Module map:
//!
//! * [`geo`] — geodesic primitives (haversine, degree displacement)
//! * [`trace`] — GPS point/trace model, CSV format, trace store
//! * [`preprocess`] — three-phase cleaning (3-sigma, smooth+DBSCAN, dedup)
//! * [`cluster`] — DBSCAN, centroid matching, ROC parameter sweep
//! * [`stations`] — stop-interval detection, station/light classification,
//!   platform geometry, persistent stations database
//! * [`timing`] — delay-sample extraction, normal fits with KS check,
//!   trip-time aggregation, ETA queries, history store
//! * [`network`] — line topology, direction detection, line identification
//! * [`sim`] — synthetic network + trace generator with ground truth

pub mod cluster;
pub mod geo;
pub mod network;
pub mod preprocess;
pub mod sim;
pub mod stations;
pub mod timing;
pub mod trace;

mod stats;

pub use geo::{EarthModel, GeoCoord};

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoord(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("too many malformed lines in {path}: {bad}/{total} exceeds ratio {ratio} (first bad lines: {first_lines:?})")]
    BadLineRatio {
        path: String,
        bad: usize,
        total: usize,
        ratio: f64,
        first_lines: Vec<u64>,
    },

    #[error("stations database error: {0}")]
    StationsDb(String),

    #[error("no delay distribution fitted for element {0}")]
    UnresolvedElement(String),

    #[error("position does not snap to the network (nearest edge {nearest_m:.1} m away, snap limit {snap_m} m)")]
    Unsnappable { nearest_m: f64, snap_m: f64 },

    #[error("destination {0} not reachable in travel direction")]
    Unreachable(String),

    #[error("no upstream tram for station {0}")]
    NoUpcomingArrival(String),

    #[error("inconsistent network spec: {0}")]
    NetworkSpec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
