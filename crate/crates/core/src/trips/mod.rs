//! Trip inference from presence-timeline gaps, plus enrichment and
//! classification of the inferred rentals.
//!
//! A rental shows up as a vehicle vanishing from the availability feed at A
//! and reappearing at B. Pickup is taken as the last instant the vehicle was
//! listed at A and dropoff as the first instant it is listed at B, so both are
//! within one poll period of the true event.

mod classify;
mod fuel;
mod routing;

use std::io::{self, BufRead, Write};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, haversine_m, GeoPoint};
use crate::ingest::VehicleTimeline;

pub use classify::{
    band_position, classify_durations, classify_trip, trip_kind_shares, BandPosition, ClassifierParams, KindShares,
    TripKind,
};
pub use fuel::{fuel_distance_km, ConsumptionTable, FuelEstimate};
pub use routing::{
    enrich_trips, estimate_route, FixtureProvider, OfflineProvider, RouteEstimate, RouteRequest, RoutingError,
    RoutingProvider,
};

#[derive(Debug, Error)]
pub enum TripsError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed trip record on line {line}: {source}")]
    Decode { line: usize, source: serde_json::Error },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// An inferred rental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub vehicle_id: String,
    pub city_id: String,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub pickup: DateTime<Utc>,
    pub dropoff: DateTime<Utc>,
    pub rental_duration_s: i64,
    /// Fuel or charge consumed, in percentage points (negative after a refill).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_delta: Option<f64>,
    pub geodesic_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_estimate: Option<RouteEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_distance_km: Option<f64>,
    #[serde(default)]
    pub maintenance_suspect: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TripKind>,
}

impl Trip {
    pub fn rental_duration(&self) -> TimeDelta {
        TimeDelta::seconds(self.rental_duration_s)
    }
}

/// Thresholds separating real rentals from feed glitches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlitchParams {
    pub min_trip_duration: TimeDelta,
    pub min_displacement_m: f64,
}

impl Default for GlitchParams {
    fn default() -> Self {
        Self {
            min_trip_duration: TimeDelta::minutes(5),
            min_displacement_m: 50.0,
        }
    }
}

/// Merges short same-spot gaps into the surrounding presence interval.
///
/// A gap is kept as a rental when it lasts at least `min_trip_duration` or the
/// vehicle reappears at least `min_displacement_m` away. Returns the cleaned
/// timeline and the number of merged gaps.
pub fn merge_glitches(timeline: &VehicleTimeline, params: &GlitchParams) -> (VehicleTimeline, usize) {
    let mut merged = 0;
    let mut intervals: Vec<crate::ingest::PresenceInterval> = Vec::with_capacity(timeline.intervals.len());
    for iv in &timeline.intervals {
        if let Some(prev) = intervals.last_mut() {
            let gap = iv.start - prev.end;
            let moved = haversine_m(prev.position, iv.position);
            if gap < params.min_trip_duration && moved < params.min_displacement_m {
                prev.end = iv.end;
                prev.fuel_end = iv.fuel_end;
                merged += 1;
                continue;
            }
        }
        intervals.push(iv.clone());
    }
    let cleaned = VehicleTimeline {
        intervals,
        ..timeline.clone()
    };
    (cleaned, merged)
}

/// One trip per surviving gap between consecutive presence intervals.
pub fn infer_trips(timeline: &VehicleTimeline, params: &GlitchParams) -> Vec<Trip> {
    let (cleaned, _) = merge_glitches(timeline, params);
    trips_from_gaps(&cleaned)
}

/// Every gap of an already-cleaned timeline becomes a trip.
pub fn trips_from_gaps(timeline: &VehicleTimeline) -> Vec<Trip> {
    timeline
        .intervals
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            let fuel_delta = match (a.fuel_end, b.fuel_start) {
                (Some(before), Some(after)) => Some(before - after),
                _ => None,
            };
            Trip {
                vehicle_id: timeline.vehicle_id.clone(),
                city_id: timeline.city_id.clone(),
                origin: a.position,
                destination: b.position,
                pickup: a.end,
                dropoff: b.start,
                rental_duration_s: (b.start - a.end).num_seconds(),
                fuel_delta,
                geodesic_km: haversine_km(a.position, b.position),
                route_estimate: None,
                fuel_distance_km: None,
                maintenance_suspect: fuel_delta.is_some_and(|d| d < 0.0),
                kind: None,
            }
        })
        .collect()
}

pub fn write_trips<W: Write>(mut out: W, trips: &[Trip]) -> io::Result<()> {
    for t in trips {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trips<R: BufRead>(input: R) -> Result<Vec<Trip>, TripsError> {
    let mut trips = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trip = serde_json::from_str(&line).map_err(|source| TripsError::Decode { line: i + 1, source })?;
        trips.push(trip);
    }
    Ok(trips)
}
