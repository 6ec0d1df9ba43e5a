//! Fleet-level indicators: utilisation, idle time, operational area, fleet
//! density, rental-duration statistics and Pearson correlations.

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{centroid, GeoPoint, LocalProjection};
use crate::ingest::VehicleTimeline;
use crate::trips::Trip;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("fleet size must be positive")]
    ZeroFleet,
    #[error("observation period must be positive")]
    ZeroDays,
    #[error("operational area must be positive")]
    ZeroArea,
    #[error("no trips to summarise")]
    NoTrips,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired observations, got {0}")]
    TooFewPoints(usize),
    #[error("series has zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetKpis {
    pub city_id: String,
    pub fleet_size: usize,
    pub trips: usize,
    pub observation_days: f64,
    pub utilization_rate: f64,
    pub mean_idle_fraction: f64,
    pub operational_area_km2: f64,
    pub fleet_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    /// Rental duration quantiles in seconds at 5, 25, 50, 75 and 95 %.
    pub quantiles_s: [f64; 5],
    pub mean_s: f64,
    pub share_under_1h: f64,
}

pub const DURATION_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Daily trips per vehicle.
pub fn utilization_rate(trips: usize, fleet_size: usize, days: f64) -> Result<f64, MetricsError> {
    if fleet_size == 0 {
        return Err(MetricsError::ZeroFleet);
    }
    if !(days > 0.0) {
        return Err(MetricsError::ZeroDays);
    }
    Ok(trips as f64 / (fleet_size as f64 * days))
}

/// Share of the observation window the vehicle spent parked.
pub fn idle_fraction(timeline: &VehicleTimeline) -> f64 {
    let window = timeline.window.span().num_seconds();
    if window <= 0 {
        return 1.0;
    }
    let parked: i64 = timeline
        .intervals
        .iter()
        .map(|iv| {
            let start = iv.start.max(timeline.window.first);
            let end = iv.end.min(timeline.window.last);
            (end - start).num_seconds().max(0)
        })
        .sum();
    (parked as f64 / window as f64).clamp(0.0, 1.0)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of planar points (Andrew's monotone chain), counter-clockwise
/// and without collinear vertices.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn polygon_area(ring: &[(f64, f64)]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let twice: f64 = ring
        .iter()
        .zip(ring.iter().cycle().skip(1))
        .map(|(a, b)| a.0 * b.1 - b.0 * a.1)
        .sum();
    twice.abs() / 2.0
}

/// Area of the convex hull of parked positions, on a local projection
/// anchored at their centroid. Degenerate sets yield 0.
pub fn operational_area_km2(positions: &[GeoPoint]) -> f64 {
    let Some(anchor) = centroid(positions.iter().copied()) else {
        log::warn!("operational area requested for an empty position set");
        return 0.0;
    };
    let proj = LocalProjection::new(anchor);
    let planar: Vec<(f64, f64)> = positions.iter().map(|&p| proj.project(p)).collect();
    let hull = convex_hull(&planar);
    let area = polygon_area(&hull) / 1e6;
    if area == 0.0 {
        log::warn!("operational area is degenerate ({} hull vertices)", hull.len());
    }
    area
}

/// Vehicles per km² of operational area.
pub fn fleet_density(fleet_size: usize, area_km2: f64) -> Result<f64, MetricsError> {
    if !(area_km2 > 0.0) {
        return Err(MetricsError::ZeroArea);
    }
    Ok(fleet_size as f64 / area_km2)
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn rental_duration_stats(trips: &[Trip]) -> Result<DurationStats, MetricsError> {
    let durations: Vec<f64> = trips.iter().map(|t| t.rental_duration_s as f64).collect();
    duration_stats(&durations)
}

pub fn duration_stats(durations_s: &[f64]) -> Result<DurationStats, MetricsError> {
    if durations_s.is_empty() {
        return Err(MetricsError::NoTrips);
    }
    let mut sorted = durations_s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles_s = DURATION_QUANTILES.map(|q| quantile_sorted(&sorted, q));
    let n = sorted.len() as f64;
    Ok(DurationStats {
        quantiles_s,
        mean_s: sorted.iter().sum::<f64>() / n,
        share_under_1h: sorted.iter().filter(|&&d| d < 3600.0).count() as f64 / n,
    })
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Number of observation days, counting the last poll's period in full.
pub fn observation_days(span: TimeDelta, poll_period: TimeDelta) -> f64 {
    (span + poll_period).num_seconds() as f64 / 86_400.0
}

/// All fleet indicators of one city.
pub fn fleet_kpis<'a, I>(city_id: &str, timelines: I, trips: usize, days: f64) -> Result<FleetKpis, MetricsError>
where
    I: IntoIterator<Item = &'a VehicleTimeline>,
{
    let timelines: Vec<&VehicleTimeline> = timelines.into_iter().collect();
    let fleet_size = timelines.len();
    let positions: Vec<GeoPoint> = timelines
        .iter()
        .flat_map(|tl| tl.intervals.iter().map(|iv| iv.position))
        .collect();
    let area = operational_area_km2(&positions);
    let density = if area > 0.0 {
        fleet_density(fleet_size, area)?
    } else {
        0.0
    };
    let mean_idle = if fleet_size == 0 {
        0.0
    } else {
        timelines.iter().map(|tl| idle_fraction(tl)).sum::<f64>() / fleet_size as f64
    };
    Ok(FleetKpis {
        city_id: city_id.to_string(),
        fleet_size,
        trips,
        observation_days: days,
        utilization_rate: utilization_rate(trips, fleet_size, days)?,
        mean_idle_fraction: mean_idle,
        operational_area_km2: area,
        fleet_density: density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ObservationWindow, PresenceInterval};
    use approx::assert_abs_diff_eq;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    #[test]
    fn utilization_table_values() {
        assert_abs_diff_eq!(utilization_rate(49_901, 349, 45.0).unwrap(), 3.177, epsilon = 1e-3);
        // 223044 / 44145
        assert_abs_diff_eq!(utilization_rate(223_044, 981, 45.0).unwrap(), 5.052_531, epsilon = 1e-6);
        assert_abs_diff_eq!(utilization_rate(12_168, 194, 45.0).unwrap(), 1.394, epsilon = 1e-3);
        assert_eq!(utilization_rate(0, 10, 3.0).unwrap(), 0.0);
        assert_eq!(utilization_rate(5, 0, 3.0), Err(MetricsError::ZeroFleet));
        assert_eq!(utilization_rate(5, 3, 0.0), Err(MetricsError::ZeroDays));
    }

    fn timeline(parked_hours: &[(i64, i64)], window_h: i64) -> VehicleTimeline {
        let t0 = Utc.with_ymd_and_hms(2015, 5, 18, 0, 0, 0).unwrap();
        VehicleTimeline {
            vehicle_id: "v".into(),
            city_id: "c".into(),
            window: ObservationWindow {
                first: t0,
                last: t0 + TimeDelta::hours(window_h),
            },
            intervals: parked_hours
                .iter()
                .map(|&(s, e)| PresenceInterval {
                    start: t0 + TimeDelta::hours(s),
                    end: t0 + TimeDelta::hours(e),
                    position: GeoPoint::new(45.0, 9.0),
                    fuel_start: None,
                    fuel_end: None,
                })
                .collect(),
        }
    }

    #[test]
    fn idle_fractions() {
        assert_eq!(idle_fraction(&timeline(&[(0, 24)], 24)), 1.0);
        assert_eq!(idle_fraction(&timeline(&[(0, 10), (12, 16), (20, 24)], 24)), 0.75);
    }

    fn square_corners(side_km: f64) -> Vec<GeoPoint> {
        let proj = LocalProjection::new(GeoPoint::new(48.137, 11.575));
        let h = side_km * 500.0;
        [(-h, -h), (h, -h), (h, h), (-h, h)]
            .iter()
            .map(|&(x, y)| proj.unproject(x, y))
            .collect()
    }

    #[test]
    fn square_area() {
        let area = operational_area_km2(&square_corners(10.0));
        assert!((area - 100.0).abs() / 100.0 < 0.005, "{area}");
    }

    #[test]
    fn degenerate_area() {
        let p = GeoPoint::new(45.0, 9.0);
        assert_eq!(operational_area_km2(&[p, p, p]), 0.0);
        assert_eq!(operational_area_km2(&[]), 0.0);
        let line = [p, GeoPoint::new(45.01, 9.0), GeoPoint::new(45.02, 9.0)];
        assert!(operational_area_km2(&line) < 1e-9);
    }

    #[test]
    fn interior_point_keeps_area() {
        let mut pts = square_corners(4.0);
        let before = operational_area_km2(&pts);
        // the centroid anchor moves, so compare with a projection-level tolerance
        pts.push(GeoPoint::new(48.137, 11.575));
        let after = operational_area_km2(&pts);
        assert!((before - after).abs() < 1e-6 * before);
    }

    #[test]
    fn density() {
        assert_eq!(fleet_density(600, 100.0).unwrap(), 6.0);
        assert_eq!(fleet_density(0, 100.0).unwrap(), 0.0);
        assert_eq!(fleet_density(3, 0.0), Err(MetricsError::ZeroArea));
    }

    #[test]
    fn constant_durations() {
        let stats = duration_stats(&[1800.0; 7]).unwrap();
        assert_eq!(stats.quantiles_s, [1800.0; 5]);
        assert_eq!(stats.share_under_1h, 1.0);
        assert_eq!(duration_stats(&[]), Err(MetricsError::NoTrips));
    }

    #[test]
    fn type7_quantiles() {
        // R: quantile(c(1,2,3,4,10), c(.05,.25,.5,.75,.95)) -> 1.2 2 3 4 8.8
        let s = duration_stats(&[10.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        let expected = [1.2, 2.0, 3.0, 4.0, 8.8];
        for (got, want) in s.quantiles_s.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 5.0, 8.0];
        assert_abs_diff_eq!(pearson_correlation(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert_abs_diff_eq!(pearson_correlation(&x, &y).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(pearson_correlation(&x, &[1.0; 5]), Err(MetricsError::ZeroVariance));
        assert_eq!(
            pearson_correlation(&x[..2], &x[..2]),
            Err(MetricsError::TooFewPoints(2))
        );
        assert_eq!(
            pearson_correlation(&x, &x[..3]),
            Err(MetricsError::LengthMismatch(5, 3))
        );
    }

    proptest! {
        #[test]
        fn utilization_is_homogeneous(trips in 0usize..100_000, fleet in 1usize..2_000, days in 1u32..90) {
            let a = utilization_rate(trips, fleet, days as f64).unwrap();
            let b = utilization_rate(trips * 2, fleet * 2, days as f64).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn hull_area_is_order_free_and_monotone(
            pts in prop::collection::vec((-5000.0f64..5000.0, -5000.0f64..5000.0), 3..40),
            extra in (-8000.0f64..8000.0, -8000.0f64..8000.0),
        ) {
            let area = polygon_area(&convex_hull(&pts));
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert!((polygon_area(&convex_hull(&rev)) - area).abs() <= 1e-6 * area.max(1.0));
            rev.push(extra);
            prop_assert!(polygon_area(&convex_hull(&rev)) >= area - 1e-6 * area.max(1.0));
        }

        #[test]
        fn pearson_affine_sign(
            x in prop::collection::vec(-100.0f64..100.0, 3..30),
            a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
            b in -100.0f64..100.0,
        ) {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            prop_assume!(x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() > 1e-6);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = pearson_correlation(&x, &y).unwrap();
            prop_assert!((r - a.signum()).abs() < 1e-9, "r = {}", r);
        }
    }
}
