use std::collections::HashMap;
use std::io::{self, BufRead};
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trip, TripsError};
use crate::geo::{haversine_km, GeoPoint};

/// Expected direct route between a trip's endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEstimate {
    pub expected_travel_time_s: f64,
    pub expected_distance_km: f64,
    pub provider: String,
}

#[derive(Debug, Clone, Copy)]
pub struct RouteRequest {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub departure: DateTime<Utc>,
}

impl RouteRequest {
    pub fn for_trip(trip: &Trip) -> Self {
        Self {
            origin: trip.origin,
            destination: trip.destination,
            departure: trip.pickup,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("origin and destination coincide")]
    DegenerateEndpoints,
    #[error("no route known for {0:?} -> {1:?}")]
    NotFound(GeoPoint, GeoPoint),
    #[error("provider failure: {0}")]
    Provider(String),
}

/// A source of expected travel times. Implementations must tolerate
/// concurrent calls.
pub trait RoutingProvider: Send + Sync {
    fn route(&self, request: &RouteRequest) -> Result<RouteEstimate, RoutingError>;
}

/// Distance-scaled geodesic routing: no network access, pure function of the
/// endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineProvider {
    pub detour_factor: f64,
    pub urban_speed_kmh: f64,
}

impl Default for OfflineProvider {
    fn default() -> Self {
        Self {
            detour_factor: 1.3,
            urban_speed_kmh: 30.0,
        }
    }
}

impl OfflineProvider {
    pub const TAG: &'static str = "offline";

    /// Expected drive time for a geodesic distance.
    pub fn estimate_time_s(&self, geodesic_km: f64) -> f64 {
        self.detour_factor * geodesic_km / self.urban_speed_kmh * 3600.0
    }

    pub fn estimate(&self, origin: GeoPoint, destination: GeoPoint) -> Result<RouteEstimate, RoutingError> {
        let geodesic = haversine_km(origin, destination);
        if geodesic <= 0.0 {
            return Err(RoutingError::DegenerateEndpoints);
        }
        let distance = self.detour_factor * geodesic;
        Ok(RouteEstimate {
            expected_travel_time_s: self.estimate_time_s(geodesic),
            expected_distance_km: distance,
            provider: Self::TAG.to_string(),
        })
    }
}

impl RoutingProvider for OfflineProvider {
    fn route(&self, request: &RouteRequest) -> Result<RouteEstimate, RoutingError> {
        self.estimate(request.origin, request.destination)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FixtureKey([i64; 4]);

impl FixtureKey {
    // 1e-5 degree is roughly one metre
    fn new(o: GeoPoint, d: GeoPoint) -> Self {
        let q = |v: f64| (v * 1e5).round() as i64;
        Self([q(o.lat), q(o.lon), q(d.lat), q(d.lon)])
    }
}

#[derive(Debug, Deserialize)]
struct FixtureEntry {
    origin: GeoPoint,
    destination: GeoPoint,
    travel_time_s: f64,
    distance_km: f64,
    #[serde(default)]
    provider: Option<String>,
}

/// Replays canned routing responses keyed by endpoint pair.
///
/// The fixture file is line-delimited JSON:
/// `{"origin":{"lat":..,"lon":..},"destination":{..},"travel_time_s":..,"distance_km":..}`.
/// Endpoints are matched after rounding to 1e-5 degrees; departure time is
/// not part of the key.
#[derive(Debug, Default, Clone)]
pub struct FixtureProvider {
    table: HashMap<FixtureKey, RouteEstimate>,
}

impl FixtureProvider {
    pub fn from_reader<R: BufRead>(input: R) -> Result<Self, TripsError> {
        let mut table = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: FixtureEntry =
                serde_json::from_str(&line).map_err(|source| TripsError::Decode { line: i + 1, source })?;
            table.insert(
                FixtureKey::new(e.origin, e.destination),
                RouteEstimate {
                    expected_travel_time_s: e.travel_time_s,
                    expected_distance_km: e.distance_km,
                    provider: e.provider.unwrap_or_else(|| "fixture".to_string()),
                },
            );
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, TripsError> {
        Self::from_reader(io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl RoutingProvider for FixtureProvider {
    fn route(&self, request: &RouteRequest) -> Result<RouteEstimate, RoutingError> {
        self.table
            .get(&FixtureKey::new(request.origin, request.destination))
            .cloned()
            .ok_or(RoutingError::NotFound(request.origin, request.destination))
    }
}

pub fn estimate_route(trip: &Trip, provider: &dyn RoutingProvider) -> Result<RouteEstimate, RoutingError> {
    provider.route(&RouteRequest::for_trip(trip))
}

/// Attaches route estimates in place. Failed lookups leave the trip
/// unenriched; the number of failures is returned.
pub fn enrich_trips(trips: &mut [Trip], provider: &dyn RoutingProvider) -> usize {
    trips
        .par_iter_mut()
        .map(|t| match estimate_route(t, provider) {
            Ok(est) => {
                t.route_estimate = Some(est);
                0
            }
            Err(e) => {
                log::debug!("routing failed for {} at {}: {e}", t.vehicle_id, t.pickup);
                t.route_estimate = None;
                1
            }
        })
        .sum()
}
