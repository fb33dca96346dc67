//! Geodesic and coordinate primitives shared by every other module.
//!
//! Distances are computed on a spherical Earth of radius 6373 km and are
//! always expressed in meters. Degrees appear only where clustering
//! parameters are naturally degree-valued (epsilon, distance thresholds).
//! The sphere slightly overestimates trans-polar and underestimates
//! trans-equatorial distances; at station scale (tens of meters) the error
//! is negligible.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A geographic coordinate in decimal degrees.
///
/// Construction validates the ranges, so every `GeoCoord` in the system is
/// finite and within [-90, 90] x [-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoord(format!("non-finite ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoord(format!("latitude {lat} out of [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoord(format!("longitude {lon} out of [-180, 180]")));
        }
        Ok(GeoCoord { lat, lon })
    }
}

/// Spherical Earth model. The 6373 km default is tuned for mid-latitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub radius_km: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel { radius_km: 6373.0 }
    }
}

impl EarthModel {
    pub fn new(radius_km: f64) -> Result<Self> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(Error::InvalidConfig(format!("earth radius {radius_km} must be > 0")));
        }
        Ok(EarthModel { radius_km })
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_km * 1000.0
    }

    /// Meters per degree of latitude (and of longitude at the equator).
    pub fn meters_per_degree(&self) -> f64 {
        self.radius_m() * std::f64::consts::PI / 180.0
    }
}

/// Great-circle distance in meters between two coordinates.
pub fn haversine_distance(a: GeoCoord, b: GeoCoord, earth: EarthModel) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let d_lat = (b.lat - a.lat).to_radians();
    let d_lon = (b.lon - a.lon).to_radians();

    let h = lat1.cos() * lat2.cos() * (d_lon / 2.0).sin().powi(2) + (d_lat / 2.0).sin().powi(2);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).max(0.0).sqrt());
    earth.radius_m() * c
}

/// Componentwise displacement `b - a` in degrees, as `(d_lat, d_lon)`.
pub fn degree_displacement(a: GeoCoord, b: GeoCoord) -> (f64, f64) {
    (b.lat - a.lat, b.lon - a.lon)
}

/// Local equirectangular projection anchored at a reference coordinate.
///
/// Maps coordinates to planar meters `(x east, y north)`. The projection is
/// accurate to well under 1% at city scale, which is all that map matching
/// and direction detection need.
#[derive(Debug, Clone, Copy)]
pub struct LocalProjection {
    origin: GeoCoord,
    m_per_deg: f64,
    cos_lat: f64,
}

impl LocalProjection {
    pub fn new(origin: GeoCoord, earth: EarthModel) -> Self {
        LocalProjection {
            origin,
            m_per_deg: earth.meters_per_degree(),
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    pub fn to_xy(&self, c: GeoCoord) -> (f64, f64) {
        (
            (c.lon - self.origin.lon) * self.m_per_deg * self.cos_lat,
            (c.lat - self.origin.lat) * self.m_per_deg,
        )
    }

    pub fn to_coord(&self, x: f64, y: f64) -> GeoCoord {
        GeoCoord {
            lat: self.origin.lat + y / self.m_per_deg,
            lon: self.origin.lon + x / (self.m_per_deg * self.cos_lat),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EARTH: EarthModel = EarthModel { radius_km: 6373.0 };

    fn coord(lat: f64, lon: f64) -> GeoCoord {
        GeoCoord::new(lat, lon).unwrap()
    }

    /// Independent oracle: spherical law of cosines on the same sphere.
    fn law_of_cosines(a: GeoCoord, b: GeoCoord) -> f64 {
        let p1 = a.lat.to_radians();
        let p2 = b.lat.to_radians();
        let dl = (b.lon - a.lon).to_radians();
        let inner = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).min(1.0);
        EARTH.radius_m() * inner.acos()
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let a = coord(31.2, 29.9);
        assert_eq!(haversine_distance(a, a, EARTH), 0.0);
    }

    #[test]
    fn one_hundredth_degree_of_longitude_at_mid_latitude() {
        let a = coord(31.2, 29.9);
        let b = coord(31.2, 29.91);
        let d = haversine_distance(a, b, EARTH);
        // Pinned from the law-of-cosines oracle evaluated at R = 6373 km.
        assert!((d - 951.4202411367485).abs() < 0.1, "got {d}");
        assert!((d - law_of_cosines(a, b)).abs() < 0.1);
    }

    #[test]
    fn footnote_scale_checks() {
        // 1 degree of latitude is about 111 km; 0.0001 degree about 11.1 m.
        let one_deg = haversine_distance(coord(0.0, 0.0), coord(1.0, 0.0), EARTH);
        assert!((one_deg - 111_000.0).abs() < 500.0, "got {one_deg}");
        let tiny = haversine_distance(coord(0.0, 0.0), coord(0.0001, 0.0), EARTH);
        assert!((tiny - 11.1).abs() < 0.1, "got {tiny}");
    }

    #[test]
    fn symmetry_and_nonnegativity_on_random_pairs() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let a = coord(next() * 160.0 - 80.0, next() * 340.0 - 170.0);
            let b = coord(next() * 160.0 - 80.0, next() * 340.0 - 170.0);
            let dab = haversine_distance(a, b, EARTH);
            let dba = haversine_distance(b, a, EARTH);
            assert!(dab >= 0.0);
            assert_eq!(dab, dba);
        }
    }

    #[test]
    fn agrees_with_planar_approximation_for_small_separations() {
        let m_per_deg = 111_320.0; // planar rule-of-thumb scale
        let mut state = 7u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let lat = next() * 120.0 - 60.0;
            let lon = next() * 340.0 - 170.0;
            // under 1 km separation
            let d_lat = (next() - 0.5) * 0.008;
            let d_lon = (next() - 0.5) * 0.008;
            let a = coord(lat, lon);
            let b = coord(lat + d_lat, lon + d_lon);
            let planar = ((d_lat * m_per_deg).powi(2)
                + (d_lon * m_per_deg * lat.to_radians().cos()).powi(2))
            .sqrt();
            if planar < 1.0 {
                continue; // sub-meter pairs are dominated by rounding
            }
            let hav = haversine_distance(a, b, EARTH);
            assert!(
                (hav - planar).abs() / planar < 0.01,
                "haversine {hav} vs planar {planar} at lat {lat}"
            );
        }
    }

    #[test]
    fn displacement_is_componentwise_and_antisymmetric() {
        let a = coord(31.20, 29.90);
        let b = coord(31.21, 29.90);
        assert_eq!(degree_displacement(a, a), (0.0, 0.0));
        let (d_lat, d_lon) = degree_displacement(a, b);
        assert!((d_lat - 0.01).abs() < 1e-12);
        assert_eq!(d_lon, 0.0);
        let (r_lat, r_lon) = degree_displacement(b, a);
        assert_eq!((d_lat, d_lon), (-r_lat, -r_lon));
    }

    #[test]
    fn construction_rejects_invalid_values() {
        assert!(GeoCoord::new(f64::NAN, 0.0).is_err());
        assert!(GeoCoord::new(0.0, f64::INFINITY).is_err());
        assert!(GeoCoord::new(95.0, 0.0).is_err());
        assert!(GeoCoord::new(0.0, -180.5).is_err());
        assert!(GeoCoord::new(-90.0, 180.0).is_ok());
        assert!(EarthModel::new(0.0).is_err());
        assert!(EarthModel::new(-1.0).is_err());
    }

    #[test]
    fn projection_round_trips() {
        let proj = LocalProjection::new(coord(31.2, 29.9), EARTH);
        let c = coord(31.2134, 29.9542);
        let (x, y) = proj.to_xy(c);
        let back = proj.to_coord(x, y);
        assert!((back.lat - c.lat).abs() < 1e-12);
        assert!((back.lon - c.lon).abs() < 1e-12);
        // ~0.01 deg of latitude north is ~1112 m
        let (_, y_north) = proj.to_xy(coord(31.21, 29.9));
        assert!((y_north - 1112.3).abs() < 1.0, "got {y_north}");
    }
}
