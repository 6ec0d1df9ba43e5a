//! Usage-pattern clustering of grid cells: normalised daily availability
//! profiles, banded DTW distances and k-medoids with silhouette selection.

mod dtw;
mod pam;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, CellSeries};

pub use dtw::{dtw_distance, dtw_matrix, DistanceMatrix, LocalCost};
pub use pam::{assign, medoid_cost, pam_cluster, select_k, silhouette, ClusterModel, KSelection};

#[derive(Debug, Error, PartialEq)]
pub enum TsclustError {
    #[error("empty profile")]
    EmptyProfile,
    #[error("profile lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series has {bins} bins, fewer than {days} full days of {per_day}")]
    TooShort { bins: usize, days: usize, per_day: usize },
    #[error("cell has zero mean availability")]
    ZeroMean,
    #[error("k = {k} is not valid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
}

pub const DEFAULT_BAND_RADIUS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProfile {
    pub cell: CellId,
    pub values: Vec<f64>,
}

/// Cross-day mean per time-of-day bin over the first `days` full days,
/// divided by the overall mean.
pub fn build_profile(series: &CellSeries, bins_per_day: usize, days: usize) -> Result<CellProfile, TsclustError> {
    if bins_per_day == 0 || days == 0 || series.counts.len() < bins_per_day * days {
        return Err(TsclustError::TooShort {
            bins: series.counts.len(),
            days,
            per_day: bins_per_day,
        });
    }
    let mut values = vec![0.0; bins_per_day];
    for day in series.counts[..bins_per_day * days].chunks_exact(bins_per_day) {
        for (v, &c) in values.iter_mut().zip(day) {
            *v += c as f64;
        }
    }
    for v in &mut values {
        *v /= days as f64;
    }
    let mean = values.iter().sum::<f64>() / bins_per_day as f64;
    if mean <= 0.0 {
        return Err(TsclustError::ZeroMean);
    }
    for v in &mut values {
        *v /= mean;
    }
    Ok(CellProfile {
        cell: series.cell,
        values,
    })
}

/// Profiles for every cell with nonzero availability; idle cells are skipped
/// with a warning.
pub fn build_profiles<'a, I>(series: I, bins_per_day: usize, days: usize) -> Result<Vec<CellProfile>, TsclustError>
where
    I: IntoIterator<Item = &'a CellSeries>,
{
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for s in series {
        match build_profile(s, bins_per_day, days) {
            Ok(p) => out.push(p),
            Err(TsclustError::ZeroMean) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("excluded {skipped} cells with zero mean availability from profiling");
    }
    Ok(out)
}

/// Mean profile of each cluster, indexed like `model.medoids`.
pub fn cluster_mean_profiles(profiles: &[CellProfile], model: &ClusterModel) -> Vec<Vec<f64>> {
    let len = profiles.first().map_or(0, |p| p.values.len());
    let mut sums = vec![vec![0.0; len]; model.k];
    let mut sizes = vec![0usize; model.k];
    for (p, &c) in profiles.iter().zip(&model.assignment) {
        sizes[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(sizes) {
        for v in s.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(counts: Vec<u32>) -> CellSeries {
        CellSeries {
            cell: CellId::new(0, 0),
            counts,
        }
    }

    #[test]
    fn constant_is_all_ones() {
        let p = build_profile(&series(vec![3; 144 * 2]), 144, 2).unwrap();
        assert!(p.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn day_night_halves() {
        let day: Vec<u32> = (0..144).map(|b| if b < 72 { 0 } else { 2 }).collect();
        let counts: Vec<u32> = day.iter().chain(&day).copied().collect();
        let p = build_profile(&series(counts), 144, 2).unwrap();
        assert!(p.values[..72].iter().all(|&v| v == 0.0));
        assert!(p.values[72..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_and_short() {
        assert_eq!(
            build_profile(&series(vec![0; 144]), 144, 1),
            Err(TsclustError::ZeroMean)
        );
        assert!(matches!(
            build_profile(&series(vec![1; 100]), 144, 1),
            Err(TsclustError::TooShort { .. })
        ));
        let all = [series(vec![0; 144]), series(vec![1; 144])];
        assert_eq!(build_profiles(&all, 144, 1).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn scale_invariant(counts in prop::collection::vec(0u32..20, 48), c in 1u32..10) {
            let base = build_profile(&series(counts.clone()), 24, 2);
            let scaled = build_profile(&series(counts.iter().map(|v| v * c).collect()), 24, 2);
            match (base, scaled) {
                (Ok(a), Ok(b)) => {
                    for (x, y) in a.values.iter().zip(&b.values) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                    let mean = a.values.iter().sum::<f64>() / 24.0;
                    prop_assert!((mean - 1.0).abs() < 1e-12);
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}
