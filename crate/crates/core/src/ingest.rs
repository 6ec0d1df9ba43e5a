//! Snapshot ingestion: line-delimited JSON parsing, coordinate validation and
//! per-vehicle presence timelines.
//!
//! A snapshot line lists one parked, rentable vehicle at one poll instant:
//!
//! ```text
//! {"ts":"2015-05-17T00:00:00Z","vid":"WMW-1","lat":48.137,"lon":11.575,"fuel":64,"city":"munich"}
//! ```
//!
//! Unknown fields are ignored. Lines that fail to decode, or that carry
//! coordinates or fuel levels outside their physical ranges, are counted as
//! malformed and skipped.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_m, GeoPoint};
use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid timeline parameters: {0}")]
    InvalidParams(String),
    #[error("timeline store: {0}")]
    Store(#[from] serde_json::Error),
}

/// One observation of one parked vehicle at one poll instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub timestamp: DateTime<Utc>,
    pub vehicle_id: String,
    pub position: GeoPoint,
    pub fuel_level: Option<f64>,
    pub city_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    ts: String,
    vid: String,
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fuel: Option<f64>,
    city: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("undecodable line: {0}")]
    Decode(String),
    #[error("unparseable timestamp {0:?}")]
    Timestamp(String),
    #[error("coordinates out of range")]
    Coordinates,
    #[error("fuel level out of range")]
    Fuel,
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let parsed = DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
                .map(|n| n.and_utc())
        })?;
    // second resolution
    DateTime::from_timestamp(parsed.timestamp(), 0)
}

impl SnapshotRecord {
    /// Decodes one snapshot line.
    pub fn from_json_line(line: &str) -> Result<Self, RecordError> {
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| RecordError::Decode(e.to_string()))?;
        let timestamp = parse_timestamp(&wire.ts).ok_or_else(|| RecordError::Timestamp(wire.ts.clone()))?;
        let position = GeoPoint::new(wire.lat, wire.lon);
        if !position.is_valid() {
            return Err(RecordError::Coordinates);
        }
        if let Some(f) = wire.fuel {
            if !(0.0..=100.0).contains(&f) {
                return Err(RecordError::Fuel);
            }
        }
        Ok(Self {
            timestamp,
            vehicle_id: wire.vid,
            position,
            fuel_level: wire.fuel,
            city_id: wire.city,
        })
    }

    pub fn to_json_line(&self) -> String {
        let wire = WireRecord {
            ts: self.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            vid: self.vehicle_id.clone(),
            lat: self.position.lat,
            lon: self.position.lon,
            fuel: self.fuel_level,
            city: self.city_id.clone(),
        };
        serde_json::to_string(&wire).expect("wire record is always serializable")
    }
}

/// Counters describing one ingestion run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub records_read: u64,
    pub records_parsed: u64,
    pub records_discarded_malformed: u64,
    pub records_discarded_invalid_coords: u64,
}

impl ParseReport {
    pub fn record_rejections(&mut self, rejected: usize) {
        self.records_discarded_invalid_coords += rejected as u64;
    }
}

/// Streaming reader over a snapshot stream. Blank lines are skipped without
/// being counted; every other line is either parsed or counted as malformed.
pub struct SnapshotReader<R> {
    inner: R,
    buf: String,
    report: ParseReport,
}

impl<R: BufRead> SnapshotReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: String::new(),
            report: ParseReport::default(),
        }
    }

    pub fn report(&self) -> ParseReport {
        self.report
    }
}

impl<R: BufRead> Iterator for SnapshotReader<R> {
    type Item = io::Result<SnapshotRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    // non-UTF-8 garbage is just another malformed line
                    self.report.records_read += 1;
                    self.report.records_discarded_malformed += 1;
                    let mut skip = Vec::new();
                    if let Err(e) = self.inner.read_until(b'\n', &mut skip) {
                        return Some(Err(e));
                    }
                    continue;
                }
                Err(e) => return Some(Err(e)),
            }
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            self.report.records_read += 1;
            match SnapshotRecord::from_json_line(line) {
                Ok(r) => {
                    self.report.records_parsed += 1;
                    return Some(Ok(r));
                }
                Err(_) => self.report.records_discarded_malformed += 1,
            }
        }
    }
}

/// Parses a whole snapshot stream into memory.
pub fn parse_snapshot_stream<R: BufRead>(input: R) -> Result<(Vec<SnapshotRecord>, ParseReport), IngestError> {
    let mut reader = SnapshotReader::new(input);
    let mut records = Vec::new();
    for r in reader.by_ref() {
        records.push(r?);
    }
    let report = reader.report();
    if report.records_parsed == 0 {
        log::warn!("snapshot stream contained no parseable records");
    }
    Ok((records, report))
}

pub fn write_snapshot_stream<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a SnapshotRecord>,
{
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

/// Inclusive latitude/longitude box used to discard manifestly invalid fixes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl GeoBounds {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self, IngestError> {
        let b = Self {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<(), IngestError> {
        let ok = self.min_lat < self.max_lat
            && self.min_lon < self.max_lon
            && GeoPoint::new(self.min_lat, self.min_lon).is_valid()
            && GeoPoint::new(self.max_lat, self.max_lon).is_valid();
        if ok {
            Ok(())
        } else {
            Err(IngestError::InvalidBounds(format!("{self:?}")))
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }
}

/// Splits records into those inside `bounds` and those outside.
pub fn validate_records(
    records: Vec<SnapshotRecord>,
    bounds: &GeoBounds,
) -> (Vec<SnapshotRecord>, Vec<SnapshotRecord>) {
    records.into_iter().partition(|r| bounds.contains(r.position))
}

/// Parameters controlling how observations merge into presence intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineParams {
    pub poll_period: TimeDelta,
    pub gap_tolerance: TimeDelta,
    pub jitter_radius_m: f64,
}

impl Default for TimelineParams {
    fn default() -> Self {
        let poll = TimeDelta::seconds(60);
        Self {
            poll_period: poll,
            gap_tolerance: poll * 3,
            jitter_radius_m: 25.0,
        }
    }
}

impl TimelineParams {
    pub fn with_poll_period(poll_period: TimeDelta) -> Self {
        Self {
            poll_period,
            gap_tolerance: poll_period * 3,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), IngestError> {
        if self.poll_period <= TimeDelta::zero() {
            return Err(IngestError::InvalidParams("poll period must be positive".into()));
        }
        if self.gap_tolerance < self.poll_period {
            return Err(IngestError::InvalidParams(
                "gap tolerance must be at least one poll period".into(),
            ));
        }
        if !(self.jitter_radius_m >= 0.0) {
            return Err(IngestError::InvalidParams("jitter radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// A maximal period during which a vehicle was observed parked at one spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceInterval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub position: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_end: Option<f64>,
}

impl PresenceInterval {
    pub fn duration(&self) -> TimeDelta {
        self.end - self.start
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.end
    }
}

/// First and last poll instants of a city's trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub first: DateTime<Utc>,
    pub last: DateTime<Utc>,
}

impl ObservationWindow {
    pub fn span(&self) -> TimeDelta {
        self.last - self.first
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTimeline {
    pub vehicle_id: String,
    pub city_id: String,
    pub window: ObservationWindow,
    pub intervals: Vec<PresenceInterval>,
}

impl VehicleTimeline {
    /// Total time spent inside presence intervals.
    pub fn parked_time(&self) -> TimeDelta {
        self.intervals.iter().map(PresenceInterval::duration).sum()
    }

    /// The interval containing `t`, if the vehicle was parked at that instant.
    pub fn interval_at(&self, t: DateTime<Utc>) -> Option<&PresenceInterval> {
        let idx = self.intervals.partition_point(|iv| iv.start <= t);
        idx.checked_sub(1)
            .map(|i| &self.intervals[i])
            .filter(|iv| iv.contains(t))
    }

    /// Absence gaps: the complement of the presence intervals within the window.
    pub fn gaps(&self) -> Vec<(DateTime<Utc>, DateTime<Utc>)> {
        let mut out = Vec::new();
        let mut cursor = self.window.first;
        for iv in &self.intervals {
            if iv.start > cursor {
                out.push((cursor, iv.start));
            }
            cursor = cursor.max(iv.end);
        }
        if self.window.last > cursor {
            out.push((cursor, self.window.last));
        }
        out
    }
}

/// All timelines observed in one city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityTimelines {
    pub city_id: String,
    pub window: ObservationWindow,
    pub vehicles: BTreeMap<String, VehicleTimeline>,
}

impl CityTimelines {
    pub fn fleet_size(&self) -> usize {
        self.vehicles.len()
    }
}

#[derive(Clone, Copy)]
struct Observation {
    ts: i64,
    position: GeoPoint,
    fuel: f32,
}

fn ts_of(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(secs, 0).expect("timestamp within chrono range")
}

/// Incremental timeline construction. Records may arrive in any order; each
/// vehicle's observations are sorted once at [`TimelineBuilder::finish`].
pub struct TimelineBuilder {
    params: TimelineParams,
    cities: HashMap<String, HashMap<String, Vec<Observation>>>,
    windows: HashMap<String, (i64, i64)>,
}

impl TimelineBuilder {
    pub fn new(params: TimelineParams) -> Result<Self, IngestError> {
        params.check()?;
        Ok(Self {
            params,
            cities: HashMap::new(),
            windows: HashMap::new(),
        })
    }

    pub fn push(&mut self, r: &SnapshotRecord) {
        let ts = r.timestamp.timestamp();
        let obs = Observation {
            ts,
            position: r.position,
            fuel: r.fuel_level.map_or(f32::NAN, |f| f as f32),
        };
        let city = match self.cities.get_mut(&r.city_id) {
            Some(c) => c,
            None => self.cities.entry(r.city_id.clone()).or_default(),
        };
        match city.get_mut(&r.vehicle_id) {
            Some(v) => v.push(obs),
            None => {
                city.insert(r.vehicle_id.clone(), vec![obs]);
            }
        }
        self.windows
            .entry(r.city_id.clone())
            .and_modify(|w| {
                w.0 = w.0.min(ts);
                w.1 = w.1.max(ts);
            })
            .or_insert((ts, ts));
    }

    pub fn finish(self) -> BTreeMap<String, CityTimelines> {
        let params = self.params;
        let mut out = BTreeMap::new();
        for (city_id, vehicles) in self.cities {
            let (first, last) = self.windows[&city_id];
            let window = ObservationWindow {
                first: ts_of(first),
                last: ts_of(last),
            };
            let vehicles: BTreeMap<String, VehicleTimeline> = vehicles
                .into_iter()
                .map(|(vid, obs)| {
                    let intervals = merge_observations(obs, &params);
                    let tl = VehicleTimeline {
                        vehicle_id: vid.clone(),
                        city_id: city_id.clone(),
                        window,
                        intervals,
                    };
                    (vid, tl)
                })
                .collect();
            out.insert(
                city_id.clone(),
                CityTimelines {
                    city_id,
                    window,
                    vehicles,
                },
            );
        }
        out
    }
}

fn fuel_of(f: f32) -> Option<f64> {
    (!f.is_nan()).then_some(f as f64)
}

fn merge_observations(mut obs: Vec<Observation>, params: &TimelineParams) -> Vec<PresenceInterval> {
    obs.sort_by_key(|o| o.ts);
    obs.dedup_by_key(|o| o.ts);
    let gap_tol = params.gap_tolerance.num_seconds();

    let mut intervals = Vec::new();
    let mut iter = obs.into_iter();
    let Some(first) = iter.next() else {
        return intervals;
    };
    let mut anchor = first;
    let mut end = first;
    for o in iter {
        let same_spot = haversine_m(anchor.position, o.position) <= params.jitter_radius_m;
        if o.ts - end.ts <= gap_tol && same_spot {
            end = o;
            continue;
        }
        intervals.push(PresenceInterval {
            start: ts_of(anchor.ts),
            end: ts_of(end.ts),
            position: anchor.position,
            fuel_start: fuel_of(anchor.fuel),
            fuel_end: fuel_of(end.fuel),
        });
        anchor = o;
        end = o;
    }
    intervals.push(PresenceInterval {
        start: ts_of(anchor.ts),
        end: ts_of(end.ts),
        position: anchor.position,
        fuel_start: fuel_of(anchor.fuel),
        fuel_end: fuel_of(end.fuel),
    });
    intervals
}

/// Builds timelines for records of a single city. The observation window is
/// the first and last instant seen across all records.
pub fn build_timelines(
    records: &[SnapshotRecord],
    params: TimelineParams,
) -> Result<BTreeMap<String, VehicleTimeline>, IngestError> {
    params.check()?;
    let (Some(first), Some(last)) = (
        records.iter().map(|r| r.timestamp).min(),
        records.iter().map(|r| r.timestamp).max(),
    ) else {
        return Ok(BTreeMap::new());
    };
    let window = ObservationWindow { first, last };

    let mut per_vehicle: BTreeMap<&str, (&str, Vec<Observation>)> = BTreeMap::new();
    for r in records {
        per_vehicle
            .entry(&r.vehicle_id)
            .or_insert_with(|| (&r.city_id, Vec::new()))
            .1
            .push(Observation {
                ts: r.timestamp.timestamp(),
                position: r.position,
                fuel: r.fuel_level.map_or(f32::NAN, |f| f as f32),
            });
    }
    Ok(per_vehicle
        .into_iter()
        .map(|(vid, (city, obs))| {
            let tl = VehicleTimeline {
                vehicle_id: vid.to_string(),
                city_id: city.to_string(),
                window,
                intervals: merge_observations(obs, &params),
            };
            (vid.to_string(), tl)
        })
        .collect())
}

/// On-disk handoff between the ingest stage and everything downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineStore {
    pub schema_version: u32,
    pub poll_period_s: i64,
    pub report: ParseReport,
    pub cities: BTreeMap<String, CityTimelines>,
}

impl TimelineStore {
    pub fn new(poll_period: TimeDelta, report: ParseReport, cities: BTreeMap<String, CityTimelines>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            poll_period_s: poll_period.num_seconds(),
            report,
            cities,
        }
    }

    pub fn poll_period(&self) -> TimeDelta {
        TimeDelta::seconds(self.poll_period_s)
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let file = io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let file = io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
