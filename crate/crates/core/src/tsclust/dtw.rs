use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TsclustError;

/// Pointwise cost between aligned samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalCost {
    #[default]
    Squared,
    Absolute,
}

impl LocalCost {
    #[inline]
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            LocalCost::Squared => (x - y) * (x - y),
            LocalCost::Absolute => (x - y).abs(),
        }
    }
}

/// DTW cost with a Sakoe-Chiba band of `band_radius` samples and the
/// symmetric unit-weight step pattern.
pub fn dtw_distance(a: &[f64], b: &[f64], band_radius: usize, cost: LocalCost) -> Result<f64, TsclustError> {
    if a.is_empty() || b.is_empty() {
        return Err(TsclustError::EmptyProfile);
    }
    if a.len() != b.len() {
        return Err(TsclustError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let r = band_radius.min(n - 1);
    let mut prev = vec![f64::INFINITY; n];
    let mut curr = vec![f64::INFINITY; n];
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        curr.fill(f64::INFINITY);
        for j in lo..=hi {
            let c = cost.eval(a[i], b[j]);
            curr[j] = if i == 0 && j == 0 {
                c
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { curr[j - 1] } else { f64::INFINITY };
                c + diag.min(up).min(left)
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[n - 1])
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let upper: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let computed: Vec<f64> = upper.par_iter().map(|&(i, j)| f(i, j)).collect();
        let mut values = vec![0.0; n * n];
        for (&(i, j), d) in upper.iter().zip(computed) {
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
        Self { n, values }
    }

    /// Builds a matrix from full row-major values, checking symmetry and the
    /// zero diagonal.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self, TsclustError> {
        if values.len() != n * n {
            return Err(TsclustError::InvalidMatrix(format!(
                "expected {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(TsclustError::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let d = values[i * n + j];
                if d != values[j * n + i] || !(d >= 0.0) {
                    return Err(TsclustError::InvalidMatrix(format!(
                        "entry ({i},{j}) not symmetric non-negative"
                    )));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

pub fn dtw_matrix(profiles: &[Vec<f64>], band_radius: usize, cost: LocalCost) -> Result<DistanceMatrix, TsclustError> {
    if let Some(p) = profiles.iter().find(|p| p.is_empty()) {
        debug_assert!(p.is_empty());
        return Err(TsclustError::EmptyProfile);
    }
    if let Some(first) = profiles.first() {
        if let Some(p) = profiles.iter().find(|p| p.len() != first.len()) {
            return Err(TsclustError::LengthMismatch(first.len(), p.len()));
        }
    }
    Ok(DistanceMatrix::from_fn(profiles.len(), |i, j| {
        dtw_distance(&profiles[i], &profiles[j], band_radius, cost).expect("lengths checked")
    }))
}
