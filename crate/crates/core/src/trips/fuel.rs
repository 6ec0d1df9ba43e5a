use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Trip, TripsError};

/// Average consumption per vehicle model, in fuel (or charge) percentage
/// points per kilometre.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionTable {
    rates: BTreeMap<String, f64>,
}

impl ConsumptionTable {
    pub fn new(rates: BTreeMap<String, f64>) -> Result<Self, TripsError> {
        if let Some((model, rate)) = rates.iter().find(|(_, r)| !(**r > 0.0) || !r.is_finite()) {
            return Err(TripsError::InvalidParams(format!(
                "consumption rate for {model} must be positive, got {rate}"
            )));
        }
        Ok(Self { rates })
    }

    /// Rate for a model from its tank size and average consumption.
    pub fn rate_from_tank(tank_litres: f64, litres_per_100km: f64) -> f64 {
        litres_per_100km / 100.0 / tank_litres * 100.0
    }

    pub fn insert(&mut self, model: impl Into<String>, rate: f64) -> Result<(), TripsError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(TripsError::InvalidParams(format!(
                "consumption rate must be positive, got {rate}"
            )));
        }
        self.rates.insert(model.into(), rate);
        Ok(())
    }

    pub fn rate(&self, model: &str) -> Option<f64> {
        self.rates.get(model).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuelEstimate {
    pub distance_km: Option<f64>,
    /// Set when the tank got fuller during the rental.
    pub maintenance_suspect: bool,
}

/// Distance implied by the fuel consumed during a trip.
pub fn fuel_distance_km(trip: &Trip, table: &ConsumptionTable, model: &str) -> FuelEstimate {
    let Some(delta) = trip.fuel_delta else {
        return FuelEstimate {
            distance_km: None,
            maintenance_suspect: false,
        };
    };
    if delta < 0.0 {
        return FuelEstimate {
            distance_km: None,
            maintenance_suspect: true,
        };
    }
    let Some(rate) = table.rate(model) else {
        log::warn!("no consumption rate for vehicle model {model:?}");
        return FuelEstimate {
            distance_km: None,
            maintenance_suspect: false,
        };
    };
    FuelEstimate {
        distance_km: Some(delta / rate),
        maintenance_suspect: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use chrono::{TimeZone, Utc};

    fn trip(fuel_delta: Option<f64>) -> Trip {
        let t = Utc.with_ymd_and_hms(2015, 5, 18, 9, 0, 0).unwrap();
        Trip {
            vehicle_id: "v".into(),
            city_id: "c".into(),
            origin: GeoPoint::new(45.0, 9.0),
            destination: GeoPoint::new(45.01, 9.0),
            pickup: t,
            dropoff: t + chrono::TimeDelta::minutes(20),
            rental_duration_s: 1200,
            fuel_delta,
            geodesic_km: 1.11,
            route_estimate: None,
            fuel_distance_km: None,
            maintenance_suspect: false,
            kind: None,
        }
    }

    fn table() -> ConsumptionTable {
        ConsumptionTable::new(BTreeMap::from([("compact".to_string(), 0.5)])).unwrap()
    }

    #[test]
    fn arithmetic() {
        assert_eq!(
            fuel_distance_km(&trip(Some(5.0)), &table(), "compact").distance_km,
            Some(10.0)
        );
        assert_eq!(
            fuel_distance_km(&trip(Some(0.0)), &table(), "compact").distance_km,
            Some(0.0)
        );
    }

    #[test]
    fn refuel_is_flagged() {
        let e = fuel_distance_km(&trip(Some(-30.0)), &table(), "compact");
        assert_eq!(e.distance_km, None);
        assert!(e.maintenance_suspect);
    }

    #[test]
    fn unknown_model_is_absent() {
        let e = fuel_distance_km(&trip(Some(5.0)), &table(), "van");
        assert_eq!(e.distance_km, None);
        assert!(!e.maintenance_suspect);
    }

    #[test]
    fn tank_rate() {
        // 5 l/100 km from a 40 l tank is 0.125 points per km
        assert!((ConsumptionTable::rate_from_tank(40.0, 5.0) - 0.125).abs() < 1e-12);
        assert!(ConsumptionTable::new(BTreeMap::from([("x".to_string(), 0.0)])).is_err());
    }
}
