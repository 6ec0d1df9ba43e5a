//! Candidate maintenance cells: how many distinct vehicles park in each cell
//! within a tolerance window.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, GridSpec};
use crate::ingest::{ObservationWindow, VehicleTimeline};

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("window length must be positive")]
    EmptyWindow,
    #[error("window starting {start} lies outside the observation period {first} .. {last}")]
    OutsideData {
        start: DateTime<Utc>,
        first: DateTime<Utc>,
        last: DateTime<Utc>,
    },
    #[error("no timelines")]
    NoVehicles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceWindow {
    pub start: DateTime<Utc>,
    pub days: u32,
}

impl ServiceWindow {
    pub fn new(start: DateTime<Utc>, days: u32) -> Result<Self, ServiceError> {
        if days == 0 {
            return Err(ServiceError::EmptyWindow);
        }
        Ok(Self { start, days })
    }

    /// Exclusive end instant.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + TimeDelta::days(self.days as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoverage {
    pub cell: CellId,
    pub distinct_vehicles: usize,
    pub fraction: f64,
}

/// Distinct vehicles parked in each cell at some point during the window.
/// Cells never visited are absent from the map.
pub fn distinct_vehicles_per_cell(
    timelines: &[VehicleTimeline],
    spec: &GridSpec,
    window: &ServiceWindow,
    observed: &ObservationWindow,
) -> Result<BTreeMap<CellId, CellCoverage>, ServiceError> {
    if timelines.is_empty() {
        return Err(ServiceError::NoVehicles);
    }
    if window.start < observed.first || window.start > observed.last {
        return Err(ServiceError::OutsideData {
            start: window.start,
            first: observed.first,
            last: observed.last,
        });
    }
    let end = window.end();
    // (count, index of the last vehicle counted)
    let mut seen: BTreeMap<CellId, (usize, usize)> = BTreeMap::new();
    for (v, tl) in timelines.iter().enumerate() {
        for iv in tl
            .intervals
            .iter()
            .filter(|iv| iv.start < end && iv.end >= window.start)
        {
            let entry = seen.entry(spec.cell_of(iv.position)).or_insert((0, usize::MAX));
            if entry.1 != v {
                *entry = (entry.0 + 1, v);
            }
        }
    }
    let fleet = timelines.len() as f64;
    Ok(seen
        .into_iter()
        .map(|(cell, (n, _))| {
            (
                cell,
                CellCoverage {
                    cell,
                    distinct_vehicles: n,
                    fraction: n as f64 / fleet,
                },
            )
        })
        .collect())
}

/// Per-cell maximum coverage over every full window of `days` whose start is a
/// whole number of days after the first observation.
pub fn sliding_max_coverage(
    timelines: &[VehicleTimeline],
    spec: &GridSpec,
    days: u32,
    observed: &ObservationWindow,
) -> Result<BTreeMap<CellId, CellCoverage>, ServiceError> {
    let span_days = (observed.span().num_seconds() + 86_399) / 86_400;
    let starts = (span_days - days as i64).max(0);
    let mut best: BTreeMap<CellId, CellCoverage> = BTreeMap::new();
    for offset in 0..=starts {
        let window = ServiceWindow::new(observed.first + TimeDelta::days(offset), days)?;
        for (cell, cov) in distinct_vehicles_per_cell(timelines, spec, &window, observed)? {
            best.entry(cell)
                .and_modify(|b| {
                    if cov.distinct_vehicles > b.distinct_vehicles {
                        *b = cov;
                    }
                })
                .or_insert(cov);
        }
    }
    Ok(best)
}

/// The `n` best-covered cells, ordered by coverage descending then cell.
pub fn top_service_cells(coverage: &BTreeMap<CellId, CellCoverage>, n: usize) -> Vec<CellCoverage> {
    let mut cells: Vec<CellCoverage> = coverage.values().copied().collect();
    cells.sort_by(|a, b| b.distinct_vehicles.cmp(&a.distinct_vehicles).then(a.cell.cmp(&b.cell)));
    cells.truncate(n);
    cells
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn feasible(coverage_fraction: f64, threshold: f64) -> bool {
    coverage_fraction >= threshold
}
