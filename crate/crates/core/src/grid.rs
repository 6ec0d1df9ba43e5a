//! Square-cell discretisation of the operational area and the per-cell
//! statistics built on it: availability series, empty-cell and
//! available-vehicle fractions, working-day pickup counts and regularity.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, TimeDelta, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, LocalProjection};
use crate::ingest::{ObservationWindow, VehicleTimeline};
use crate::metrics::{convex_hull, quantile_sorted};
use crate::trips::Trip;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cell side must be positive, got {0}")]
    InvalidCellSide(f64),
    #[error("bin duration must be positive")]
    InvalidBin,
    #[error("no active cells")]
    NoActiveCells,
    #[error("bin index {0} outside the series")]
    BinOutOfRange(usize),
    #[error("regularity needs at least {min} working days, got {got}")]
    TooFewDays { min: usize, got: usize },
}

/// Grid anchored at a city reference point; cells are `cell_side_m` squares
/// in the local equirectangular projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub anchor: GeoPoint,
    pub cell_side_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub ix: i64,
    pub iy: i64,
}

impl CellId {
    pub fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

impl GridSpec {
    pub const DEFAULT_CELL_SIDE_M: f64 = 500.0;

    pub fn new(anchor: GeoPoint, cell_side_m: f64) -> Result<Self, GridError> {
        if !(cell_side_m > 0.0) || !cell_side_m.is_finite() {
            return Err(GridError::InvalidCellSide(cell_side_m));
        }
        Ok(Self { anchor, cell_side_m })
    }

    fn projection(&self) -> LocalProjection {
        LocalProjection::new(self.anchor)
    }

    pub fn cell_of(&self, p: GeoPoint) -> CellId {
        let (x, y) = self.projection().project(p);
        self.cell_of_projected(x, y)
    }

    pub fn cell_of_projected(&self, x: f64, y: f64) -> CellId {
        CellId::new(
            (x / self.cell_side_m).floor() as i64,
            (y / self.cell_side_m).floor() as i64,
        )
    }

    pub fn cell_center(&self, cell: CellId) -> GeoPoint {
        let s = self.cell_side_m;
        self.projection()
            .unproject((cell.ix as f64 + 0.5) * s, (cell.iy as f64 + 0.5) * s)
    }
}

/// Regular time bins starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinAxis {
    pub start: DateTime<Utc>,
    pub bin_s: i64,
    pub n_bins: usize,
}

impl BinAxis {
    pub fn new(start: DateTime<Utc>, bin: TimeDelta, n_bins: usize) -> Result<Self, GridError> {
        if bin <= TimeDelta::zero() {
            return Err(GridError::InvalidBin);
        }
        Ok(Self {
            start,
            bin_s: bin.num_seconds(),
            n_bins,
        })
    }

    /// Bins covering an observation window, starting at the local midnight on
    /// or before its first instant so that bin index modulo bins-per-day is a
    /// time of day.
    pub fn covering(window: &ObservationWindow, bin: TimeDelta, utc_offset: TimeDelta) -> Result<Self, GridError> {
        if bin <= TimeDelta::zero() {
            return Err(GridError::InvalidBin);
        }
        let local_first = window.first + utc_offset;
        let midnight = local_first
            .date_naive()
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            - utc_offset;
        let span = (window.last - midnight).num_seconds();
        let bin_s = bin.num_seconds();
        let n_bins = (span / bin_s + 1) as usize;
        Ok(Self {
            start: midnight,
            bin_s,
            n_bins,
        })
    }

    pub fn bin(&self) -> TimeDelta {
        TimeDelta::seconds(self.bin_s)
    }

    pub fn midpoint(&self, b: usize) -> DateTime<Utc> {
        // bins with an odd number of seconds round the midpoint down
        self.start + TimeDelta::seconds(self.bin_s * b as i64 + self.bin_s / 2)
    }

    /// Inclusive range of bins whose midpoints fall inside [from, to].
    pub(crate) fn bins_with_midpoint_in(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Option<(usize, usize)> {
        let half = self.bin_s / 2;
        let a = (from - self.start).num_seconds() - half;
        let b = (to - self.start).num_seconds() - half;
        let lo = -((-a).div_euclid(self.bin_s));
        let hi = b.div_euclid(self.bin_s);
        let lo = lo.max(0);
        let hi = hi.min(self.n_bins as i64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Number of vehicles parked in one cell at every bin midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSeries {
    pub cell: CellId,
    pub counts: Vec<u32>,
}

pub fn availability_series<'a, I>(timelines: I, spec: &GridSpec, axis: &BinAxis) -> BTreeMap<CellId, CellSeries>
where
    I: IntoIterator<Item = &'a VehicleTimeline>,
{
    let mut out: BTreeMap<CellId, CellSeries> = BTreeMap::new();
    for tl in timelines {
        for iv in &tl.intervals {
            let Some((lo, hi)) = axis.bins_with_midpoint_in(iv.start, iv.end) else {
                continue;
            };
            let cell = spec.cell_of(iv.position);
            let series = out.entry(cell).or_insert_with(|| CellSeries {
                cell,
                counts: vec![0; axis.n_bins],
            });
            for c in &mut series.counts[lo..=hi] {
                *c += 1;
            }
        }
    }
    out
}

/// Vehicles parked at bin `b`, summed over all cells.
pub fn parked_per_bin(series: &BTreeMap<CellId, CellSeries>, n_bins: usize) -> Vec<u32> {
    let mut total = vec![0u32; n_bins];
    for s in series.values() {
        for (t, c) in total.iter_mut().zip(&s.counts) {
            *t += c;
        }
    }
    total
}

/// How the set of cells forming the empty-cell denominator is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveCellRule {
    /// Cells holding at least one vehicle at some bin.
    #[default]
    Occupied,
    /// Cells whose centre lies within the convex hull of parked positions.
    HullCovering,
}

pub fn occupied_cells(series: &BTreeMap<CellId, CellSeries>) -> BTreeSet<CellId> {
    series
        .values()
        .filter(|s| s.counts.iter().any(|&c| c > 0))
        .map(|s| s.cell)
        .collect()
}

pub fn hull_covering_cells(positions: &[GeoPoint], spec: &GridSpec) -> BTreeSet<CellId> {
    let proj = LocalProjection::new(spec.anchor);
    let planar: Vec<(f64, f64)> = positions.iter().map(|&p| proj.project(p)).collect();
    let hull = convex_hull(&planar);
    if hull.len() < 3 {
        return planar.iter().map(|&(x, y)| spec.cell_of_projected(x, y)).collect();
    }
    let inside = |x: f64, y: f64| {
        hull.iter()
            .zip(hull.iter().cycle().skip(1))
            .all(|(a, b)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) >= 0.0)
    };
    let s = spec.cell_side_m;
    let (min_x, max_x) = hull
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = hull
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let mut cells = BTreeSet::new();
    for ix in (min_x / s).floor() as i64..=(max_x / s).floor() as i64 {
        for iy in (min_y / s).floor() as i64..=(max_y / s).floor() as i64 {
            if inside((ix as f64 + 0.5) * s, (iy as f64 + 0.5) * s) {
                cells.insert(CellId::new(ix, iy));
            }
        }
    }
    cells
}

/// Fraction of active cells without any parked vehicle at bin `t`.
pub fn empty_cell_fraction(
    series: &BTreeMap<CellId, CellSeries>,
    t: usize,
    active_cells: &BTreeSet<CellId>,
) -> Result<f64, GridError> {
    if active_cells.is_empty() {
        return Err(GridError::NoActiveCells);
    }
    let empty = active_cells
        .iter()
        .filter(|c| match series.get(c) {
            Some(s) => s
                .counts
                .get(t)
                .copied()
                .ok_or(GridError::BinOutOfRange(t))
                .map(|v| v == 0)
                .unwrap_or(true),
            None => true,
        })
        .count();
    if let Some(s) = series.values().next() {
        if t >= s.counts.len() {
            return Err(GridError::BinOutOfRange(t));
        }
    }
    Ok(empty as f64 / active_cells.len() as f64)
}

pub fn parked_at<'a, I>(timelines: I, t: DateTime<Utc>) -> usize
where
    I: IntoIterator<Item = &'a VehicleTimeline>,
{
    timelines.into_iter().filter(|tl| tl.interval_at(t).is_some()).count()
}

/// Share of the fleet parked (hence rentable) at instant `t`.
pub fn available_vehicle_fraction<'a, I>(timelines: I, t: DateTime<Utc>) -> f64
where
    I: IntoIterator<Item = &'a VehicleTimeline>,
{
    let (mut fleet, mut parked) = (0usize, 0usize);
    for tl in timelines {
        fleet += 1;
        parked += usize::from(tl.interval_at(t).is_some());
    }
    if fleet == 0 {
        0.0
    } else {
        parked as f64 / fleet as f64
    }
}

/// Working days are Monday to Friday in city-local time, minus holidays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkCalendar {
    pub utc_offset_s: i64,
    pub holidays: BTreeSet<NaiveDate>,
}

impl WorkCalendar {
    pub fn utc_offset(&self) -> TimeDelta {
        TimeDelta::seconds(self.utc_offset_s)
    }

    pub fn local_date(&self, t: DateTime<Utc>) -> NaiveDate {
        (t + self.utc_offset()).date_naive()
    }

    pub fn is_working_day(&self, d: NaiveDate) -> bool {
        !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&d)
    }

    pub fn working_days(&self, window: &ObservationWindow) -> Vec<NaiveDate> {
        let last = self.local_date(window.last);
        self.local_date(window.first)
            .iter_days()
            .take_while(|d| *d <= last)
            .filter(|d| self.is_working_day(*d))
            .collect()
    }
}

/// Pickups per cell on each of `days`; trips on other days are ignored.
pub fn pickup_counts(
    trips: &[Trip],
    spec: &GridSpec,
    calendar: &WorkCalendar,
    days: &[NaiveDate],
) -> BTreeMap<CellId, Vec<u32>> {
    let index: BTreeMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut out: BTreeMap<CellId, Vec<u32>> = BTreeMap::new();
    for t in trips {
        let day = calendar.local_date(t.pickup);
        if !calendar.is_working_day(day) {
            continue;
        }
        let Some(&i) = index.get(&day) else { continue };
        out.entry(spec.cell_of(t.origin)).or_insert_with(|| vec![0; days.len()])[i] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityStats {
    pub cell: CellId,
    pub daily_counts: Vec<u32>,
    pub mean: f64,
    /// Coefficient of variation (population standard deviation over mean).
    pub cv: Option<f64>,
    /// Some day lies outside the 1.5 IQR fences.
    pub outlier: bool,
    pub active: bool,
}

pub const MIN_REGULARITY_DAYS: usize = 5;

/// Day-to-day variability of a cell's pickup counts.
pub fn regularity_stats(cell: CellId, counts: &[u32]) -> Result<RegularityStats, GridError> {
    if counts.len() < MIN_REGULARITY_DAYS {
        return Err(GridError::TooFewDays {
            min: MIN_REGULARITY_DAYS,
            got: counts.len(),
        });
    }
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cv = (mean > 0.0).then(|| var.sqrt() / mean);

    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let outlier = values.iter().any(|&v| v < lo || v > hi);

    Ok(RegularityStats {
        cell,
        daily_counts: counts.to_vec(),
        mean,
        cv,
        outlier,
        active: mean > 0.0,
    })
}
