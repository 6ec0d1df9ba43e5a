//! Synthetic fleets with a complete ground-truth ledger.
//!
//! Each vehicle alternates parking episodes and rentals. While parked it is
//! picked up at a piecewise-constant hazard that depends on the local regime
//! (day or night) and on the zone it sits in; destinations are drawn from zone
//! attractions for the current regime. Residential zones empty during the day
//! and fill at night, business zones do the opposite.
//!
//! Snapshots are produced lazily in time order so multi-million-record streams
//! never sit in memory.

use std::collections::BTreeSet;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, haversine_m, GeoPoint, LocalProjection};
use crate::grid::BinAxis;
use crate::ingest::{GeoBounds, SnapshotRecord, TimelineParams};
use crate::trips::{OfflineProvider, TripKind};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("demand infeasible: {0}")]
    Infeasible(String),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig(msg.into())
}

/// Index into the regime-dependent pairs below.
const DAY: usize = 0;
const NIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub name: String,
    pub east_m: f64,
    pub north_m: f64,
    /// Spread of parking positions; `None` spreads uniformly over the extent.
    #[serde(default)]
    pub sigma_m: Option<f64>,
    pub weight: f64,
    /// Pickup-hazard multipliers for [day, night].
    pub departure: [f64; 2],
    /// Destination-choice multipliers for [day, night].
    pub attraction: [f64; 2],
}

impl Hotspot {
    fn gaussian(name: &str, east_m: f64, north_m: f64, weight: f64, departure: [f64; 2], attraction: [f64; 2]) -> Self {
        Self {
            name: name.into(),
            east_m,
            north_m,
            sigma_m: Some(800.0),
            weight,
            departure,
            attraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindMix {
    pub one_way: f64,
    pub one_way_with_stops: f64,
    pub round_trip: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self {
            one_way: 0.20,
            one_way_with_stops: 0.65,
            round_trip: 0.15,
        }
    }
}

/// Log-normal durations given by their median and log-scale sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    pub median_s: f64,
    pub sigma: f64,
}

impl LogNormalSpec {
    fn distribution(&self) -> LogNormal<f64> {
        LogNormal::new(self.median_s.ln(), self.sigma).expect("checked by SynthConfig::check")
    }

    fn mean_s(&self) -> f64 {
        self.median_s * (self.sigma * self.sigma / 2.0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripDurations {
    /// Time spent at intermediate stops on top of the direct drive.
    pub stop: LogNormalSpec,
    pub stop_floor_s: f64,
    /// Share of the direct drive time that a stop lasts at least.
    pub stop_floor_share: f64,
    /// Total rental time of loops returning near the origin.
    pub round_trip: LogNormalSpec,
    pub round_trip_floor_s: f64,
    pub one_way_min_km: f64,
    pub with_stops_min_km: f64,
    pub round_trip_radius_m: [f64; 2],
}

impl Default for TripDurations {
    fn default() -> Self {
        Self {
            stop: LogNormalSpec {
                median_s: 12.0 * 60.0,
                sigma: 0.6,
            },
            stop_floor_s: 180.0,
            stop_floor_share: 0.25,
            round_trip: LogNormalSpec {
                median_s: 35.0 * 60.0,
                sigma: 0.5,
            },
            round_trip_floor_s: 15.0 * 60.0,
            one_way_min_km: 3.0,
            with_stops_min_km: 1.0,
            round_trip_radius_m: [30.0, 300.0],
        }
    }
}

/// A site a fixed share of the fleet visits once; every other parking keeps
/// out of the exclusion radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubConfig {
    pub east_m: f64,
    pub north_m: f64,
    pub visit_fraction: f64,
    /// Visits are scheduled on days `0..visit_days - 2`.
    pub visit_days: u32,
    pub exclusion_m: f64,
    pub stay_s: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub city_id: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub n_days: u32,
    pub poll_period_s: i64,
    pub start: DateTime<Utc>,
    pub utc_offset_s: i64,
    pub center: GeoPoint,
    /// The city is the square of this half-width around the centre.
    pub half_extent_m: f64,
    pub hotspots: Vec<Hotspot>,
    /// Local hours [start, end) of the day regime.
    pub day_hours: [u32; 2],
    /// Base pickup hazard per parked vehicle per hour, [day, night].
    pub pickup_rate_per_h: [f64; 2],
    pub min_parking_s: i64,
    pub kind_mix: KindMix,
    pub durations: TripDurations,
    /// Probability that an interior observation is missing from the feed.
    pub glitch_rate: f64,
    /// Probability that an interior observation is replaced by an
    /// out-of-bounds position.
    pub noise_rate: f64,
    pub gps_jitter_m: f64,
    pub fuel_per_km: f64,
    pub refuel_below: f64,
    pub truth_bin_s: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hub: Option<HubConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let home_day = [1.6, 0.5];
        let home_attr = [0.5, 1.8];
        let work_day = [0.5, 1.6];
        let work_attr = [1.8, 0.5];
        Self {
            city_id: "synth".into(),
            seed: 42,
            n_vehicles: 500,
            n_days: 14,
            poll_period_s: 60,
            start: Utc.with_ymd_and_hms(2015, 5, 18, 0, 0, 0).unwrap(),
            utc_offset_s: 0,
            center: GeoPoint::new(48.137, 11.575),
            half_extent_m: 4500.0,
            hotspots: vec![
                Hotspot::gaussian("residential-nw", -2500.0, 2500.0, 0.25, home_day, home_attr),
                Hotspot::gaussian("residential-se", 2500.0, -2500.0, 0.25, home_day, home_attr),
                Hotspot::gaussian("business-centre", 0.0, 0.0, 0.2, work_day, work_attr),
                Hotspot::gaussian("business-east", 3000.0, 1500.0, 0.1, work_day, work_attr),
                Hotspot {
                    name: "background".into(),
                    east_m: 0.0,
                    north_m: 0.0,
                    sigma_m: None,
                    weight: 0.2,
                    departure: [1.0, 1.0],
                    attraction: [1.0, 1.0],
                },
            ],
            day_hours: [7, 19],
            pickup_rate_per_h: [0.15, 0.10],
            min_parking_s: 600,
            kind_mix: KindMix::default(),
            durations: TripDurations::default(),
            glitch_rate: 0.0,
            noise_rate: 0.0,
            gps_jitter_m: 0.0,
            fuel_per_km: 0.125,
            refuel_below: 15.0,
            truth_bin_s: 600,
            hub: None,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        if self.n_vehicles == 0 {
            return Err(invalid("n_vehicles must be positive"));
        }
        if self.n_days == 0 {
            return Err(invalid("n_days must be positive"));
        }
        if self.poll_period_s <= 0 || 86_400 % self.poll_period_s != 0 {
            return Err(invalid("poll_period_s must be a positive divisor of a day"));
        }
        if self.truth_bin_s <= 0 || 86_400 % self.truth_bin_s != 0 {
            return Err(invalid("truth_bin_s must be a positive divisor of a day"));
        }
        if !(self.half_extent_m > 0.0) {
            return Err(invalid("half_extent_m must be positive"));
        }
        if !self.center.is_valid() {
            return Err(invalid("centre coordinates out of range"));
        }
        if self.hotspots.is_empty() || self.hotspots.iter().any(|h| !(h.weight >= 0.0)) {
            return Err(invalid("need at least one hotspot with non-negative weights"));
        }
        if self.hotspots.iter().map(|h| h.weight).sum::<f64>() <= 0.0 {
            return Err(invalid("hotspot weights sum to zero"));
        }
        for h in &self.hotspots {
            if h.departure.iter().chain(&h.attraction).any(|m| !(*m >= 0.0)) {
                return Err(invalid(format!("hotspot {} has a negative multiplier", h.name)));
            }
            if h.sigma_m.is_some_and(|s| !(s > 0.0)) {
                return Err(invalid(format!("hotspot {} has a non-positive spread", h.name)));
            }
        }
        if self.day_hours[0] >= self.day_hours[1] || self.day_hours[1] > 24 {
            return Err(invalid("day_hours must satisfy start < end <= 24"));
        }
        if self.pickup_rate_per_h.iter().any(|r| !(*r >= 0.0)) {
            return Err(invalid("pickup rates must be non-negative"));
        }
        let m = self.kind_mix;
        let parts = [m.one_way, m.one_way_with_stops, m.round_trip];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("kind mix fractions must be non-negative and sum to 1"));
        }
        for (name, rate) in [("glitch_rate", self.glitch_rate), ("noise_rate", self.noise_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.glitch_rate + self.noise_rate >= 1.0 {
            return Err(invalid("glitch_rate + noise_rate must be below 1"));
        }
        let d = &self.durations;
        for s in [d.stop, d.round_trip] {
            if !(s.median_s > 0.0) || !(s.sigma >= 0.0) {
                return Err(invalid(
                    "log-normal durations need positive median and non-negative sigma",
                ));
            }
        }
        if !(d.round_trip_radius_m[0] >= 0.0 && d.round_trip_radius_m[0] < d.round_trip_radius_m[1]) {
            return Err(invalid("round_trip_radius_m must be an increasing pair"));
        }
        if !(self.gps_jitter_m >= 0.0) || self.min_parking_s < 0 {
            return Err(invalid("gps_jitter_m and min_parking_s must be non-negative"));
        }
        if let Some(hub) = &self.hub {
            if !(0.0..=1.0).contains(&hub.visit_fraction) || hub.visit_days < 3 || hub.stay_s <= 0 {
                return Err(invalid(
                    "hub needs visit_fraction in [0,1], visit_days >= 3 and a positive stay",
                ));
            }
            if hub.visit_days > self.n_days {
                return Err(invalid("hub visit_days exceeds n_days"));
            }
        }

        // a parked vehicle must spend most of its time parked
        let mean_trip_s = m.one_way * self.direct_time_s(2.0 * d.one_way_min_km)
            + m.one_way_with_stops * (self.direct_time_s(2.0 * d.with_stops_min_km) + d.stop.mean_s())
            + m.round_trip * d.round_trip.mean_s().max(d.round_trip_floor_s);
        let max_mult = self.hotspots.iter().flat_map(|h| h.departure).fold(0.0f64, f64::max);
        let peak = self.pickup_rate_per_h.iter().copied().fold(0.0f64, f64::max) * max_mult / 3600.0;
        let busy = peak * (mean_trip_s + self.min_parking_s as f64);
        if busy >= 1.0 {
            return Err(SynthError::Infeasible(format!(
                "peak demand keeps vehicles busy {busy:.2} of the time"
            )));
        }
        Ok(())
    }

    fn direct_time_s(&self, geodesic_km: f64) -> f64 {
        OfflineProvider::default().estimate_time_s(geodesic_km)
    }

    pub fn timeline_params(&self) -> TimelineParams {
        TimelineParams::with_poll_period(TimeDelta::seconds(self.poll_period_s))
    }

    /// Bounds of the operational square with a one-kilometre margin.
    pub fn bounds(&self) -> GeoBounds {
        let proj = LocalProjection::new(self.center);
        let r = self.half_extent_m + 1000.0;
        let sw = proj.unproject(-r, -r);
        let ne = proj.unproject(r, r);
        GeoBounds::new(sw.lat, ne.lat, sw.lon, ne.lon).expect("positive extent")
    }

    pub fn n_polls(&self) -> i64 {
        self.n_days as i64 * 86_400 / self.poll_period_s
    }

    pub fn poll_instant(&self, k: i64) -> DateTime<Utc> {
        self.start + TimeDelta::seconds(k * self.poll_period_s)
    }

    fn regime_at(&self, t: i64) -> usize {
        let local = (t + self.utc_offset_s).rem_euclid(86_400);
        let hour = (local / 3600) as u32;
        if (self.day_hours[0]..self.day_hours[1]).contains(&hour) {
            DAY
        } else {
            NIGHT
        }
    }

    /// Next regime switch strictly after `t`.
    fn next_regime_switch(&self, t: i64) -> i64 {
        let local = t + self.utc_offset_s;
        let day_start = local.div_euclid(86_400) * 86_400;
        let bounds = [
            self.day_hours[0] as i64 * 3600,
            self.day_hours[1] as i64 * 3600,
            86_400 + self.day_hours[0] as i64 * 3600,
        ];
        let next = bounds
            .iter()
            .map(|b| day_start + b)
            .find(|&b| b > local)
            .expect("a switch within the next day");
        next - self.utc_offset_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrip {
    pub vehicle_id: String,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub pickup: DateTime<Utc>,
    pub dropoff: DateTime<Utc>,
    pub kind: TripKind,
    /// Time beyond the direct drive, seconds.
    pub stop_s: f64,
    #[serde(default)]
    pub hub_visit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParking {
    pub vehicle_id: String,
    pub position: GeoPoint,
    pub from: DateTime<Utc>,
    pub until: DateTime<Utc>,
    pub zone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub config: SynthConfig,
    pub trips: Vec<TruthTrip>,
    pub parkings: Vec<TruthParking>,
    /// Vehicles parked at each bin midpoint.
    pub parked_per_bin: Vec<u32>,
    pub bin_s: i64,
    pub records_emitted: u64,
    pub glitches_dropped: u64,
    pub noise_records: u64,
    pub hub_visitors: Vec<String>,
}

impl GroundTruth {
    pub fn bin_axis(&self) -> BinAxis {
        BinAxis::new(
            self.config.start,
            TimeDelta::seconds(self.bin_s),
            self.parked_per_bin.len(),
        )
        .expect("positive bin")
    }
}

pub fn vehicle_id(i: usize) -> String {
    format!("V{i:04}")
}

struct Episode {
    position: GeoPoint,
    from: i64,
    until: i64,
    fuel: f64,
}

struct VehiclePlan {
    id: String,
    episodes: Vec<Episode>,
    /// Poll indices whose observation is missing, ascending.
    dropped: Vec<i64>,
    /// Poll indices whose observation is out of bounds, ascending.
    noisy: Vec<i64>,
}

struct Planner<'a> {
    cfg: &'a SynthConfig,
    proj: LocalProjection,
    normal: Normal<f64>,
    hub_point: Option<(f64, f64)>,
    start_s: i64,
    horizon_s: i64,
}

impl<'a> Planner<'a> {
    fn new(cfg: &'a SynthConfig) -> Self {
        let start_s = cfg.start.timestamp();
        Self {
            cfg,
            proj: LocalProjection::new(cfg.center),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
            hub_point: cfg.hub.as_ref().map(|h| (h.east_m, h.north_m)),
            start_s,
            horizon_s: start_s + (cfg.n_polls() - 1) * cfg.poll_period_s,
        }
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        let r = self.cfg.half_extent_m;
        x.abs() <= r && y.abs() <= r
    }

    fn allowed(&self, x: f64, y: f64) -> bool {
        self.inside(x, y)
            && match (self.hub_point, &self.cfg.hub) {
                (Some((hx, hy)), Some(h)) => ((x - hx).powi(2) + (y - hy).powi(2)).sqrt() > h.exclusion_m,
                _ => true,
            }
    }

    fn pick_zone(&self, rng: &mut ChaCha8Rng, regime: Option<usize>) -> usize {
        let weights: Vec<f64> = self
            .cfg
            .hotspots
            .iter()
            .map(|h| h.weight * regime.map_or(1.0, |r| h.attraction[r]))
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return rng.random_range(0..weights.len());
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        weights.iter().rposition(|w| *w > 0.0).expect("positive total")
    }

    fn point_in_zone(&self, rng: &mut ChaCha8Rng, zone: usize) -> (f64, f64) {
        let h = &self.cfg.hotspots[zone];
        let r = self.cfg.half_extent_m;
        match h.sigma_m {
            Some(s) => (
                h.east_m + s * self.normal.sample(rng),
                h.north_m + s * self.normal.sample(rng),
            ),
            None => (rng.random_range(-r..=r), rng.random_range(-r..=r)),
        }
    }

    /// Destination for a trip of `kind` from `origin`, drawn from the
    /// attractions of `regime`.
    fn destination(
        &self,
        rng: &mut ChaCha8Rng,
        origin: (f64, f64),
        kind: TripKind,
        regime: usize,
    ) -> Result<((f64, f64), usize), SynthError> {
        let d = &self.cfg.durations;
        for _ in 0..10_000 {
            let (p, zone) = if kind == TripKind::RoundTrip {
                let [lo, hi] = d.round_trip_radius_m;
                let radius = (lo * lo + rng.random::<f64>() * (hi * hi - lo * lo)).sqrt();
                let angle = rng.random::<f64>() * std::f64::consts::TAU;
                (
                    (origin.0 + radius * angle.cos(), origin.1 + radius * angle.sin()),
                    usize::MAX,
                )
            } else {
                let zone = self.pick_zone(rng, Some(regime));
                (self.point_in_zone(rng, zone), zone)
            };
            if !self.allowed(p.0, p.1) {
                continue;
            }
            let km = haversine_km(self.geo(origin), self.geo(p));
            let ok = match kind {
                TripKind::OneWay => km >= d.one_way_min_km,
                TripKind::OneWayWithStops => km >= d.with_stops_min_km,
                TripKind::RoundTrip => km * 1000.0 <= d.round_trip_radius_m[1],
            };
            if ok {
                return Ok((p, zone));
            }
        }
        Err(SynthError::Infeasible(format!(
            "no admissible destination for a {kind:?} trip"
        )))
    }

    fn geo(&self, p: (f64, f64)) -> GeoPoint {
        self.proj.unproject(p.0, p.1)
    }

    /// First pickup at or after `from` under the zone's hazard, or `None`
    /// past the horizon.
    fn next_pickup(&self, rng: &mut ChaCha8Rng, from: i64, zone: usize) -> Option<i64> {
        let mut t = from as f64;
        while t <= self.horizon_s as f64 {
            let ti = t.floor() as i64;
            let regime = self.cfg.regime_at(ti);
            let mult = self.cfg.hotspots.get(zone).map_or(1.0, |h| h.departure[regime]);
            let rate = self.cfg.pickup_rate_per_h[regime] * mult / 3600.0;
            let switch = self.cfg.next_regime_switch(ti) as f64;
            if rate > 0.0 {
                let e: f64 = Exp1.sample(rng);
                let cand = t + e / rate;
                if cand < switch {
                    return Some(cand.ceil() as i64);
                }
            }
            t = switch;
        }
        None
    }

    fn draw_kind(&self, rng: &mut ChaCha8Rng) -> TripKind {
        let m = self.cfg.kind_mix;
        let u = rng.random::<f64>();
        if u < m.one_way {
            TripKind::OneWay
        } else if u < m.one_way + m.one_way_with_stops {
            TripKind::OneWayWithStops
        } else {
            TripKind::RoundTrip
        }
    }

    /// Rental duration and stop time for a trip of `kind` over `km`.
    fn duration(&self, rng: &mut ChaCha8Rng, kind: TripKind, km: f64) -> (i64, f64) {
        let d = &self.cfg.durations;
        let poll = self.cfg.poll_period_s as f64;
        let t_g = self.cfg.direct_time_s(km);
        match kind {
            TripKind::OneWay => {
                // observed durations exceed the true one by less than two polls
                let lo = 0.91 * t_g;
                let hi = (1.19 * t_g - 2.0 * poll).max(lo);
                let dur = lo + rng.random::<f64>() * (hi - lo);
                (dur.ceil() as i64, 0.0)
            }
            TripKind::OneWayWithStops => {
                let floor = d.stop_floor_s.max(d.stop_floor_share * t_g);
                let stop = d.stop.distribution().sample(rng).max(floor);
                ((t_g + stop).ceil() as i64, stop)
            }
            TripKind::RoundTrip => {
                let dur = d.round_trip.distribution().sample(rng).max(d.round_trip_floor_s);
                (dur.ceil() as i64, (dur - t_g).max(0.0))
            }
        }
    }

    fn plan_vehicle(
        &self,
        index: usize,
        hub_time: Option<i64>,
        trips: &mut Vec<TruthTrip>,
    ) -> Result<VehiclePlan, SynthError> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64 + 1);
        let id = vehicle_id(index);

        let mut zone = self.pick_zone(&mut rng, None);
        let mut pos = loop {
            let p = self.point_in_zone(&mut rng, zone);
            if self.allowed(p.0, p.1) {
                break p;
            }
        };
        let mut fuel = (rng.random_range(300..=1000) as f64) / 10.0;
        let mut from = self.start_s;
        let mut pending_hub = hub_time;
        let mut episodes = Vec::new();

        loop {
            let earliest = from + cfg.min_parking_s;
            let natural = self.next_pickup(&mut rng, earliest, zone);
            let forced = pending_hub.map(|t| t.max(earliest));
            let (pickup, to_hub) = match (natural, forced) {
                (Some(n), Some(f)) if n < f => (n, false),
                (_, Some(f)) => (f, true),
                (Some(n), None) => (n, false),
                (None, None) => break,
            };

            let (kind, dest, dest_zone) = if to_hub {
                let hub = cfg.hub.as_ref().expect("hub scheduled");
                let angle = rng.random::<f64>() * std::f64::consts::TAU;
                let r = 50.0 * rng.random::<f64>().sqrt();
                (
                    TripKind::OneWayWithStops,
                    (hub.east_m + r * angle.cos(), hub.north_m + r * angle.sin()),
                    usize::MAX,
                )
            } else {
                let kind = self.draw_kind(&mut rng);
                let regime = cfg.regime_at(pickup);
                let (p, z) = self.destination(&mut rng, pos, kind, regime)?;
                (kind, p, if z == usize::MAX { zone } else { z })
            };
            let (a, b) = (self.geo(pos), self.geo(dest));
            let km = haversine_km(a, b);
            let (dur, stop) = self.duration(&mut rng, kind, km);
            let dropoff = pickup + dur;
            if dropoff + cfg.min_parking_s > self.horizon_s {
                if to_hub {
                    return Err(SynthError::Infeasible(format!(
                        "hub visit of {id} does not fit the horizon"
                    )));
                }
                break;
            }

            episodes.push(Episode {
                position: a,
                from,
                until: pickup,
                fuel,
            });
            trips.push(TruthTrip {
                vehicle_id: id.clone(),
                origin: a,
                destination: b,
                pickup: ts(pickup),
                dropoff: ts(dropoff),
                kind,
                stop_s: stop,
                hub_visit: to_hub,
            });

            let driven_km = match kind {
                TripKind::RoundTrip => dur as f64 / 3600.0 * 10.0,
                _ => 1.3 * km + stop / 3600.0 * 10.0,
            };
            fuel = ((fuel - cfg.fuel_per_km * driven_km) * 10.0).round() / 10.0;
            if fuel < cfg.refuel_below {
                fuel = 100.0;
            }
            fuel = fuel.clamp(0.0, 100.0);

            pos = dest;
            zone = dest_zone;
            from = dropoff;
            if to_hub {
                pending_hub = None;
                let hub = cfg.hub.as_ref().expect("hub scheduled");
                // park at the hub for the whole stay, then leave normally
                let stay_until = from + hub.stay_s - cfg.min_parking_s;
                let leave = self.next_pickup(&mut rng, stay_until.max(from + cfg.min_parking_s), zone);
                let Some(leave) = leave else { break };
                let kind = match self.draw_kind(&mut rng) {
                    TripKind::RoundTrip => TripKind::OneWayWithStops,
                    k => k,
                };
                let (next, z) = self.destination(&mut rng, pos, kind, cfg.regime_at(leave))?;
                let (a, b) = (self.geo(pos), self.geo(next));
                let km = haversine_km(a, b);
                let (dur, stop) = self.duration(&mut rng, kind, km);
                if leave + dur + cfg.min_parking_s > self.horizon_s {
                    break;
                }
                episodes.push(Episode {
                    position: a,
                    from,
                    until: leave,
                    fuel,
                });
                trips.push(TruthTrip {
                    vehicle_id: id.clone(),
                    origin: a,
                    destination: b,
                    pickup: ts(leave),
                    dropoff: ts(leave + dur),
                    kind,
                    stop_s: stop,
                    hub_visit: false,
                });
                fuel = ((fuel - cfg.fuel_per_km * 1.3 * km) * 10.0).round() / 10.0;
                if fuel < cfg.refuel_below {
                    fuel = 100.0;
                }
                pos = next;
                zone = z;
                from = leave + dur;
            }
        }
        episodes.push(Episode {
            position: self.geo(pos),
            from,
            until: self.horizon_s,
            fuel,
        });

        let (dropped, noisy) = self.plan_feed_faults(&mut rng, &episodes);
        Ok(VehiclePlan {
            id,
            episodes,
            dropped,
            noisy,
        })
    }

    /// Missing and corrupted observations, only at least three polls inside
    /// an episode and never more than two in a row.
    fn plan_feed_faults(&self, rng: &mut ChaCha8Rng, episodes: &[Episode]) -> (Vec<i64>, Vec<i64>) {
        let (mut dropped, mut noisy) = (Vec::new(), Vec::new());
        if self.cfg.glitch_rate == 0.0 && self.cfg.noise_rate == 0.0 {
            return (dropped, noisy);
        }
        let poll = self.cfg.poll_period_s;
        for e in episodes {
            let first = (e.from - self.start_s + poll - 1).div_euclid(poll);
            let last = (e.until - self.start_s).div_euclid(poll);
            let mut run = 0;
            for k in first + 3..=last - 3 {
                let u = rng.random::<f64>();
                if run < 2 && u < self.cfg.glitch_rate {
                    dropped.push(k);
                    run += 1;
                } else if run < 2 && u < self.cfg.glitch_rate + self.cfg.noise_rate {
                    noisy.push(k);
                    run += 1;
                } else {
                    run = 0;
                }
            }
        }
        (dropped, noisy)
    }
}

fn ts(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(secs, 0).expect("timestamp within range")
}

/// Lazily emitted snapshot records in poll order, vehicles by id within a poll.
pub struct SnapshotStream {
    cfg: SynthConfig,
    plans: Vec<VehiclePlan>,
    cursors: Vec<(usize, usize, usize)>,
    jitter_rng: ChaCha8Rng,
    noise_position: GeoPoint,
    proj: LocalProjection,
    poll: i64,
    vehicle: usize,
}

impl SnapshotStream {
    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }
}

impl Iterator for SnapshotStream {
    type Item = SnapshotRecord;

    fn next(&mut self) -> Option<SnapshotRecord> {
        let n_polls = self.cfg.n_polls();
        let start = self.cfg.start.timestamp();
        while self.poll < n_polls {
            let t = start + self.poll * self.cfg.poll_period_s;
            while self.vehicle < self.plans.len() {
                let v = self.vehicle;
                self.vehicle += 1;
                let plan = &self.plans[v];
                let (ep, dr, no) = &mut self.cursors[v];
                while *ep < plan.episodes.len() && plan.episodes[*ep].until < t {
                    *ep += 1;
                }
                let Some(e) = plan.episodes.get(*ep).filter(|e| e.from <= t) else {
                    continue;
                };
                while *dr < plan.dropped.len() && plan.dropped[*dr] < self.poll {
                    *dr += 1;
                }
                if plan.dropped.get(*dr) == Some(&self.poll) {
                    continue;
                }
                while *no < plan.noisy.len() && plan.noisy[*no] < self.poll {
                    *no += 1;
                }
                let position = if plan.noisy.get(*no) == Some(&self.poll) {
                    self.noise_position
                } else if self.cfg.gps_jitter_m > 0.0 {
                    let (x, y) = self.proj.project(e.position);
                    let r = self.cfg.gps_jitter_m * self.jitter_rng.random::<f64>().sqrt();
                    let a = self.jitter_rng.random::<f64>() * std::f64::consts::TAU;
                    self.proj.unproject(x + r * a.cos(), y + r * a.sin())
                } else {
                    e.position
                };
                return Some(SnapshotRecord {
                    timestamp: ts(t),
                    vehicle_id: plan.id.clone(),
                    position,
                    fuel_level: Some(e.fuel),
                    city_id: self.cfg.city_id.clone(),
                });
            }
            self.poll += 1;
            self.vehicle = 0;
        }
        None
    }
}

/// Plans the whole fleet and returns the lazy snapshot stream with its
/// ground truth. Emission counts in the truth are exact.
pub fn generate(cfg: &SynthConfig) -> Result<(SnapshotStream, GroundTruth), SynthError> {
    cfg.check()?;
    let planner = Planner::new(cfg);

    let mut hub_times: Vec<Option<i64>> = vec![None; cfg.n_vehicles];
    let mut hub_visitors = Vec::new();
    if let Some(hub) = &cfg.hub {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let visitors = (hub.visit_fraction * cfg.n_vehicles as f64).round() as usize;
        let mut order: Vec<usize> = (0..cfg.n_vehicles).collect();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = order[..visitors].to_vec();
        chosen.sort_unstable();
        for v in chosen {
            let day = rng.random_range(0..hub.visit_days as i64 - 2);
            let offset = rng.random_range(6 * 3600..20 * 3600);
            hub_times[v] = Some(planner.start_s + day * 86_400 + offset);
            hub_visitors.push(vehicle_id(v));
        }
    }

    let mut trips = Vec::new();
    let mut plans = Vec::with_capacity(cfg.n_vehicles);
    for (v, hub_time) in hub_times.iter().enumerate() {
        plans.push(planner.plan_vehicle(v, *hub_time, &mut trips)?);
    }

    let poll = cfg.poll_period_s;
    let mut records = 0u64;
    let (mut dropped, mut noisy) = (0u64, 0u64);
    for p in &plans {
        for e in &p.episodes {
            let first = (e.from - planner.start_s + poll - 1).div_euclid(poll);
            let last = (e.until - planner.start_s).div_euclid(poll);
            records += (last - first + 1).max(0) as u64;
        }
        dropped += p.dropped.len() as u64;
        noisy += p.noisy.len() as u64;
    }
    records -= dropped;

    let n_bins = (cfg.n_days as i64 * 86_400 / cfg.truth_bin_s) as usize;
    let axis = BinAxis::new(cfg.start, TimeDelta::seconds(cfg.truth_bin_s), n_bins).expect("checked bin");
    let mut parked_per_bin = vec![0u32; n_bins];
    let mut parkings = Vec::new();
    for p in &plans {
        for e in &p.episodes {
            if let Some((lo, hi)) = axis.bins_with_midpoint_in(ts(e.from), ts(e.until)) {
                for c in &mut parked_per_bin[lo..=hi] {
                    *c += 1;
                }
            }
            let (x, y) = planner.proj.project(e.position);
            parkings.push(TruthParking {
                vehicle_id: p.id.clone(),
                position: e.position,
                from: ts(e.from),
                until: ts(e.until),
                zone: nearest_zone(cfg, x, y),
            });
        }
    }

    let noise_position = GeoPoint::new(
        if cfg.center.lat > 0.0 {
            cfg.center.lat - 20.0
        } else {
            cfg.center.lat + 20.0
        },
        cfg.center.lon,
    );
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    jitter_rng.set_stream(u64::MAX);
    let stream = SnapshotStream {
        cfg: cfg.clone(),
        cursors: vec![(0, 0, 0); plans.len()],
        plans,
        jitter_rng,
        noise_position,
        proj: planner.proj,
        poll: 0,
        vehicle: 0,
    };
    let truth = GroundTruth {
        schema_version: crate::SCHEMA_VERSION,
        config: cfg.clone(),
        trips,
        parkings,
        parked_per_bin,
        bin_s: cfg.truth_bin_s,
        records_emitted: records,
        glitches_dropped: dropped,
        noise_records: noisy,
        hub_visitors,
    };
    Ok((stream, truth))
}

fn nearest_zone(cfg: &SynthConfig, x: f64, y: f64) -> usize {
    cfg.hotspots
        .iter()
        .enumerate()
        .filter(|(_, h)| h.sigma_m.is_some())
        .map(|(i, h)| (i, (x - h.east_m).powi(2) + (y - h.north_m).powi(2)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i)
}

/// Vehicles ids seen in the truth ledger.
pub fn fleet_ids(truth: &GroundTruth) -> BTreeSet<String> {
    (0..truth.config.n_vehicles).map(vehicle_id).collect()
}

/// Distance check used by tests and callers: every round trip in the ledger
/// returns within `radius_m` of its origin.
pub fn round_trips_within(truth: &GroundTruth, radius_m: f64) -> bool {
    truth
        .trips
        .iter()
        .filter(|t| t.kind == TripKind::RoundTrip)
        .all(|t| haversine_m(t.origin, t.destination) < radius_m)
}
