use serde::{Deserialize, Serialize};

use super::{Trip, TripsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripKind {
    OneWay,
    OneWayWithStops,
    RoundTrip,
}

impl TripKind {
    pub const ALL: [TripKind; 3] = [TripKind::OneWay, TripKind::OneWayWithStops, TripKind::RoundTrip];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierParams {
    pub delta_low: f64,
    pub delta_up: f64,
    pub proximity_radius_m: f64,
    pub reference_speed_kmh: f64,
    pub dwell_factor: f64,
    /// Lower bound on the dwell threshold, seconds.
    pub min_dwell_s: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            delta_low: 0.1,
            delta_up: 0.2,
            proximity_radius_m: 500.0,
            reference_speed_kmh: 50.0,
            dwell_factor: 2.0,
            min_dwell_s: 300.0,
        }
    }
}

impl ClassifierParams {
    pub fn check(&self) -> Result<(), TripsError> {
        let ok = (0.0..1.0).contains(&self.delta_low)
            && self.delta_up >= 0.0
            && self.proximity_radius_m > 0.0
            && self.reference_speed_kmh > 0.0
            && self.dwell_factor > 0.0
            && self.min_dwell_s >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TripsError::InvalidParams(format!(
                "classifier parameters out of range: {self:?}"
            )))
        }
    }

    /// Rental time above which a near-closed loop counts as a round trip.
    pub fn dwell_threshold_s(&self, distance_km: f64) -> f64 {
        (self.dwell_factor * distance_km / self.reference_speed_kmh * 3600.0).max(self.min_dwell_s)
    }
}

/// Where a rental duration falls relative to the expected-time band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandPosition {
    Below,
    Within,
    Above,
}

pub fn band_position(t_rent_s: f64, t_google_s: f64, params: &ClassifierParams) -> BandPosition {
    if t_rent_s < t_google_s * (1.0 - params.delta_low) {
        BandPosition::Below
    } else if t_rent_s <= t_google_s * (1.0 + params.delta_up) {
        BandPosition::Within
    } else {
        BandPosition::Above
    }
}

/// Core decision rule on scalar inputs.
///
/// Without a routing estimate only near-closed loops can be classified; far
/// endpoints without an estimate are left unclassified.
pub fn classify_durations(
    t_rent_s: f64,
    t_google_s: Option<f64>,
    distance_km: f64,
    params: &ClassifierParams,
) -> Option<TripKind> {
    let near = distance_km * 1000.0 < params.proximity_radius_m;
    let looped = near && t_rent_s > params.dwell_threshold_s(distance_km);
    match t_google_s {
        Some(t_google) => Some(match band_position(t_rent_s, t_google, params) {
            BandPosition::Within | BandPosition::Below => TripKind::OneWay,
            BandPosition::Above if looped => TripKind::RoundTrip,
            BandPosition::Above => TripKind::OneWayWithStops,
        }),
        None if looped => Some(TripKind::RoundTrip),
        None if near => Some(TripKind::OneWay),
        None => None,
    }
}

pub fn classify_trip(trip: &Trip, params: &ClassifierParams) -> Option<TripKind> {
    classify_durations(
        trip.rental_duration_s as f64,
        trip.route_estimate.as_ref().map(|r| r.expected_travel_time_s),
        trip.geodesic_km,
        params,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindShares {
    pub one_way: f64,
    pub one_way_with_stops: f64,
    pub round_trip: f64,
    pub classified: usize,
    pub unclassified: usize,
}

impl KindShares {
    pub fn share(&self, kind: TripKind) -> f64 {
        match kind {
            TripKind::OneWay => self.one_way,
            TripKind::OneWayWithStops => self.one_way_with_stops,
            TripKind::RoundTrip => self.round_trip,
        }
    }
}

/// Fraction of classified trips per kind; unclassified trips are counted but
/// excluded from the denominator.
pub fn trip_kind_shares(trips: &[Trip]) -> KindShares {
    let mut counts = [0usize; 3];
    let mut unclassified = 0;
    for t in trips {
        match t.kind {
            Some(TripKind::OneWay) => counts[0] += 1,
            Some(TripKind::OneWayWithStops) => counts[1] += 1,
            Some(TripKind::RoundTrip) => counts[2] += 1,
            None => unclassified += 1,
        }
    }
    let classified: usize = counts.iter().sum();
    let frac = |c: usize| {
        if classified == 0 {
            0.0
        } else {
            c as f64 / classified as f64
        }
    };
    KindShares {
        one_way: frac(counts[0]),
        one_way_with_stops: frac(counts[1]),
        round_trip: frac(counts[2]),
        classified,
        unclassified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIN: f64 = 60.0;

    #[test]
    fn matching_duration_is_one_way() {
        let p = ClassifierParams::default();
        assert_eq!(
            classify_durations(21.0 * MIN, Some(20.0 * MIN), 4.0, &p),
            Some(TripKind::OneWay)
        );
    }

    #[test]
    fn band_edges() {
        let p = ClassifierParams::default();
        assert_eq!(band_position(18.0 * MIN, 20.0 * MIN, &p), BandPosition::Within);
        assert_eq!(band_position(24.0 * MIN, 20.0 * MIN, &p), BandPosition::Within);
        assert_eq!(band_position(17.9 * MIN, 20.0 * MIN, &p), BandPosition::Below);
        assert_eq!(band_position(24.1 * MIN, 20.0 * MIN, &p), BandPosition::Above);
    }

    #[test]
    fn long_rental_near_origin_is_round_trip() {
        let p = ClassifierParams::default();
        // 0.1 km at 50 km/h is 7.2 s of driving
        let t_google = Some(0.13 / 30.0 * 3600.0);
        assert_eq!(
            classify_durations(45.0 * MIN, t_google, 0.1, &p),
            Some(TripKind::RoundTrip)
        );
        assert_eq!(classify_durations(45.0 * MIN, None, 0.1, &p), Some(TripKind::RoundTrip));
    }

    #[test]
    fn long_rental_far_away_has_stops() {
        let p = ClassifierParams::default();
        assert_eq!(
            classify_durations(40.0 * MIN, Some(10.0 * MIN), 3.0, &p),
            Some(TripKind::OneWayWithStops)
        );
    }

    #[test]
    fn near_but_short_above_band_has_stops() {
        let p = ClassifierParams::default();
        // above the band but below the five-minute dwell floor
        assert_eq!(
            classify_durations(4.0 * MIN, Some(1.0 * MIN), 0.3, &p),
            Some(TripKind::OneWayWithStops)
        );
    }

    #[test]
    fn fast_rental_is_one_way() {
        let p = ClassifierParams::default();
        assert_eq!(
            classify_durations(5.0 * MIN, Some(20.0 * MIN), 6.0, &p),
            Some(TripKind::OneWay)
        );
    }

    #[test]
    fn far_without_estimate_is_unclassified() {
        let p = ClassifierParams::default();
        assert_eq!(classify_durations(30.0 * MIN, None, 3.0, &p), None);
    }

    #[test]
    fn shares() {
        assert_eq!(trip_kind_shares(&[]).classified, 0);
        let mut shares = KindShares::default();
        shares.one_way = 1.0;
        assert_eq!(shares.share(TripKind::OneWay), 1.0);
    }

    #[test]
    fn param_ranges() {
        assert!(ClassifierParams::default().check().is_ok());
        let mut p = ClassifierParams::default();
        p.delta_low = 1.0;
        assert!(p.check().is_err());
        p = ClassifierParams::default();
        p.reference_speed_kmh = 0.0;
        assert!(p.check().is_err());
    }

    proptest! {
        #[test]
        fn band_selection_is_scale_free(
            t_rent in 1.0f64..20_000.0,
            t_google in 1.0f64..20_000.0,
            scale in 0.01f64..100.0,
        ) {
            let p = ClassifierParams::default();
            let base = band_position(t_rent, t_google, &p);
            let scaled = band_position(t_rent * scale, t_google * scale, &p);
            // exact ratio ties can flip under rounding; skip them
            let ratio = t_rent / t_google;
            prop_assume!((ratio - 0.9).abs() > 1e-9 && (ratio - 1.2).abs() > 1e-9);
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn estimate_always_yields_exactly_one_kind(
            t_rent in 0.0f64..20_000.0,
            t_google in 1.0f64..20_000.0,
            dist in 0.0f64..20.0,
        ) {
            let p = ClassifierParams::default();
            let kind = classify_durations(t_rent, Some(t_google), dist, &p);
            prop_assert!(kind.is_some());
            let expected = match band_position(t_rent, t_google, &p) {
                BandPosition::Above => {
                    if dist < 0.5 && t_rent > p.dwell_threshold_s(dist) {
                        TripKind::RoundTrip
                    } else {
                        TripKind::OneWayWithStops
                    }
                }
                _ => TripKind::OneWay,
            };
            prop_assert_eq!(kind, Some(expected));
        }
    }
}
