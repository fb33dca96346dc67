//! Three-phase trace cleaning: coarse outlier removal (per-coordinate
//! three-sigma band), noise filtering (window smoothing plus density
//! clustering), and duplicate removal (quantized cell + time window).
//!
//! Every phase is a pure function of its input and config, output point
//! count never exceeds input count, and surviving points keep their time
//! order. Traces are independent, so batches clean in parallel.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::cluster::{self, Metric, NOISE};
use crate::geo::{EarthModel, GeoCoord};
use crate::stats::RunningMoments;
use crate::trace::{GpsPoint, Trace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Band half-width in standard deviations for phase 1.
    pub sigma_k: f64,
    /// Samples per non-overlapping smoothing window in phase 2.
    pub window: usize,
    /// DBSCAN parameters for phase-2 noise removal. These are for noise
    /// filtering and are deliberately separate from the station-detection
    /// clustering parameters.
    pub db_minpts: usize,
    pub db_eps_deg: f64,
    /// Phase-3 duplicate definition: same quantized cell within this time
    /// window of the group's first point. `dup_window_ms = 0` disables
    /// duplicate removal entirely.
    pub dup_quantum_deg: f64,
    pub dup_window_ms: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            sigma_k: 3.0,
            window: 5,
            db_minpts: 20,
            db_eps_deg: 0.0002,
            dup_quantum_deg: 0.00001, // ~1.1 m cells
            dup_window_ms: 5000,
        }
    }
}

impl PreprocessConfig {
    /// Defaults tuned for a single 1 Hz rider trace, where the generic
    /// defaults are too aggressive: no window smoothing (keeps the
    /// point count and dwell structure intact), a sparser density
    /// requirement so that a lone moving tram's track stays connected,
    /// and a sub-sample duplicate window that only drops re-emitted fixes.
    /// This is what the end-to-end pipeline uses.
    pub fn per_trace_1hz() -> Self {
        PreprocessConfig {
            sigma_k: 3.0,
            window: 1,
            db_minpts: 8,
            db_eps_deg: 0.0005,
            dup_quantum_deg: 0.00001,
            dup_window_ms: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_k.is_finite() && self.sigma_k > 0.0) {
            return Err(Error::InvalidConfig("sigma_k must be > 0".into()));
        }
        if self.window < 1 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if self.db_minpts < 1 {
            return Err(Error::InvalidConfig("db_minpts must be >= 1".into()));
        }
        if !(self.db_eps_deg.is_finite() && self.db_eps_deg > 0.0) {
            return Err(Error::InvalidConfig("db_eps_deg must be > 0".into()));
        }
        if !(self.dup_quantum_deg.is_finite() && self.dup_quantum_deg > 0.0) {
            return Err(Error::InvalidConfig("dup_quantum_deg must be > 0".into()));
        }
        if self.dup_window_ms < 0 {
            return Err(Error::InvalidConfig("dup_window_ms must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input_points: usize,
    pub removed_phase1: usize,
    /// Points absorbed into window centroids during smoothing.
    pub merged_phase2: usize,
    /// Points dropped as density noise.
    pub removed_phase2: usize,
    pub removed_phase3: usize,
    pub output_points: usize,
    /// `output_points / input_points`; `None` for empty input.
    pub retention_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

/// Phase 1: keep points whose lat AND lon both lie within
/// `mean ± sigma_k * std` of that coordinate's sample statistics.
pub fn phase1_coarse(points: &[GpsPoint], sigma_k: f64) -> (Vec<GpsPoint>, usize, Option<String>) {
    if points.len() < 2 {
        let warning = Some("phase1 skipped: fewer than 2 points, std undefined".to_string());
        return (points.to_vec(), 0, warning);
    }
    let lat = RunningMoments::from_samples(&points.iter().map(|p| p.coord.lat).collect::<Vec<_>>());
    let lon = RunningMoments::from_samples(&points.iter().map(|p| p.coord.lon).collect::<Vec<_>>());
    let lat_half = sigma_k * lat.variance().sqrt();
    let lon_half = sigma_k * lon.variance().sqrt();
    let kept: Vec<GpsPoint> = points
        .iter()
        .filter(|p| {
            (p.coord.lat - lat.mean).abs() <= lat_half && (p.coord.lon - lon.mean).abs() <= lon_half
        })
        .cloned()
        .collect();
    let removed = points.len() - kept.len();
    (kept, removed, None)
}

fn smooth_window(window: &[GpsPoint]) -> GpsPoint {
    let n = window.len() as f64;
    let lat = window.iter().map(|p| p.coord.lat).sum::<f64>() / n;
    let lon = window.iter().map(|p| p.coord.lon).sum::<f64>() / n;
    let speeds: Vec<f64> = window.iter().filter_map(|p| p.speed).collect();
    let speed = if speeds.is_empty() {
        None
    } else {
        Some(speeds.iter().sum::<f64>() / speeds.len() as f64)
    };
    GpsPoint {
        device_id: window[0].device_id.clone(),
        // lower-median timestamp, so it is an observed instant
        t_ms: window[(window.len() - 1) / 2].t_ms,
        coord: GeoCoord { lat, lon },
        speed,
        event: window.iter().find_map(|p| p.event),
    }
}

/// Phase 2: centroid-smooth non-overlapping windows (trailing partial
/// window averaged as-is), then drop DBSCAN noise in degree space.
/// Returns (kept, merged_by_smoothing, removed_as_noise).
pub fn phase2_denoise(
    points: &[GpsPoint],
    window: usize,
    db_minpts: usize,
    db_eps_deg: f64,
) -> (Vec<GpsPoint>, usize, usize) {
    let smoothed: Vec<GpsPoint> = if window <= 1 {
        points.to_vec()
    } else {
        points.chunks(window).map(smooth_window).collect()
    };
    let merged = points.len() - smoothed.len();

    if smoothed.is_empty() {
        return (smoothed, merged, 0);
    }
    let coords: Vec<GeoCoord> = smoothed.iter().map(|p| p.coord).collect();
    let result = cluster::dbscan(
        &coords,
        db_minpts,
        db_eps_deg,
        Metric::DegreeEuclidean,
        EarthModel::default(),
    );
    let kept: Vec<GpsPoint> = smoothed
        .into_iter()
        .zip(&result.labels)
        .filter(|(_, &l)| l != NOISE)
        .map(|(p, _)| p)
        .collect();
    let removed = result.noise_count();
    (kept, merged, removed)
}

/// Phase 3: among points sharing a quantized cell whose timestamps fall
/// within `dup_window_ms` of the group's first point, only the first
/// survives. Later visits to the same cell open a new group.
pub fn phase3_dedup(points: &[GpsPoint], dup_quantum_deg: f64, dup_window_ms: i64) -> (Vec<GpsPoint>, usize) {
    let mut group_start: std::collections::HashMap<(i64, i64), i64> =
        std::collections::HashMap::new();
    let mut kept = Vec::with_capacity(points.len());
    for p in points {
        let cell = (
            (p.coord.lat / dup_quantum_deg).floor() as i64,
            (p.coord.lon / dup_quantum_deg).floor() as i64,
        );
        match group_start.get(&cell) {
            Some(&t0) if p.t_ms - t0 < dup_window_ms => {} // duplicate, drop
            _ => {
                group_start.insert(cell, p.t_ms);
                kept.push(p.clone());
            }
        }
    }
    let removed = points.len() - kept.len();
    (kept, removed)
}

/// Full phase 1 -> 2 -> 3 composition over one trace.
pub fn preprocess(trace: &Trace, config: &PreprocessConfig) -> Result<(Trace, PreprocessReport)> {
    config.validate()?;
    let mut report = PreprocessReport { input_points: trace.points.len(), ..Default::default() };

    let (p1, removed1, warning) = phase1_coarse(&trace.points, config.sigma_k);
    report.removed_phase1 = removed1;
    if let Some(w) = warning {
        report.warnings.push(w);
    }

    let (p2, merged, removed2) =
        phase2_denoise(&p1, config.window, config.db_minpts, config.db_eps_deg);
    report.merged_phase2 = merged;
    report.removed_phase2 = removed2;

    let (p3, removed3) = phase3_dedup(&p2, config.dup_quantum_deg, config.dup_window_ms);
    report.removed_phase3 = removed3;

    report.output_points = p3.len();
    report.retention_ratio = if report.input_points == 0 {
        report.warnings.push("empty input: retention undefined".to_string());
        None
    } else {
        Some(report.output_points as f64 / report.input_points as f64)
    };

    Ok((Trace { device_id: trace.device_id.clone(), points: p3 }, report))
}

/// Clean a batch of traces (in parallel when the feature is enabled).
pub fn preprocess_batch(
    traces: &[Trace],
    config: &PreprocessConfig,
) -> Result<Vec<(Trace, PreprocessReport)>> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    {
        traces.par_iter().map(|t| preprocess(t, config)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        traces.iter().map(|t| preprocess(t, config)).collect()
    }
}
