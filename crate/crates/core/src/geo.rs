//! Geographic primitives shared by every stage: points, great-circle distance
//! and the local equirectangular projection used for grids and hull areas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

const EARTH_RADIUS_M: f64 = EARTH_RADIUS_KM * 1000.0;

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// True when both coordinates are finite and inside the WGS84 ranges.
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Great-circle distance between two points in kilometres (haversine formula).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // clamp guards against h drifting past 1 for antipodal points
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    haversine_km(a, b) * 1000.0
}

/// Equirectangular projection around an anchor, in metres.
///
/// Longitude offsets are scaled by the cosine of the anchor latitude, which
/// keeps distortion negligible over a city-sized extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub anchor: GeoPoint,
}

impl LocalProjection {
    pub fn new(anchor: GeoPoint) -> Self {
        Self { anchor }
    }

    fn metres_per_degree_lat() -> f64 {
        EARTH_RADIUS_M * PI / 180.0
    }

    fn metres_per_degree_lon(&self) -> f64 {
        Self::metres_per_degree_lat() * self.anchor.lat.to_radians().cos()
    }

    /// Projects `p` to (east, north) metres relative to the anchor.
    pub fn project(&self, p: GeoPoint) -> (f64, f64) {
        let x = (p.lon - self.anchor.lon) * self.metres_per_degree_lon();
        let y = (p.lat - self.anchor.lat) * Self::metres_per_degree_lat();
        (x, y)
    }

    pub fn unproject(&self, east_m: f64, north_m: f64) -> GeoPoint {
        GeoPoint {
            lat: self.anchor.lat + north_m / Self::metres_per_degree_lat(),
            lon: self.anchor.lon + east_m / self.metres_per_degree_lon(),
        }
    }
}

/// Arithmetic mean of a set of positions. `None` for an empty set.
pub fn centroid<I>(points: I) -> Option<GeoPoint>
where
    I: IntoIterator<Item = GeoPoint>,
{
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        lat += p.lat;
        lon += p.lon;
        n += 1;
    }
    (n > 0).then(|| GeoPoint::new(lat / n as f64, lon / n as f64))
}
