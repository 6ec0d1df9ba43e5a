//! City-level comparison: PCA of modal-split indicators and k-means grouping
//! with an elbow rule on the within-cluster sum of squares.

use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CityStatsError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("modal shares of {city} sum to {sum}, expected 1 +/- 0.02")]
    SharesDoNotSum { city: String, sum: f64 },
    #[error("negative modal share for {0}")]
    NegativeShare(String),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("column {0} has zero variance")]
    ZeroVariance(usize),
    #[error("k = {k} is not valid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("points have inconsistent dimensions")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityIndicators {
    pub city: String,
    pub car: f64,
    pub moto: f64,
    pub pt: f64,
    pub bike: f64,
    pub walk: f64,
    #[serde(default)]
    pub gdp_per_capita: Option<f64>,
    #[serde(default)]
    pub population: Option<f64>,
    #[serde(default)]
    pub area_km2: Option<f64>,
    #[serde(default)]
    pub population_density: Option<f64>,
    #[serde(default)]
    pub education: Option<f64>,
}

pub const MODES: [&str; 5] = ["car", "moto", "pt", "bike", "walk"];

impl CityIndicators {
    pub fn shares(&self) -> [f64; 5] {
        [self.car, self.moto, self.pt, self.bike, self.walk]
    }

    pub fn check(&self) -> Result<(), CityStatsError> {
        let shares = self.shares();
        if shares.iter().any(|s| *s < 0.0) {
            return Err(CityStatsError::NegativeShare(self.city.clone()));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > 0.02 {
            return Err(CityStatsError::SharesDoNotSum {
                city: self.city.clone(),
                sum,
            });
        }
        Ok(())
    }
}

pub fn read_indicators<R: Read>(input: R) -> Result<Vec<CityIndicators>, CityStatsError> {
    let mut rows = Vec::new();
    for row in csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .deserialize()
    {
        let row: CityIndicators = row?;
        row.check()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Cities by modes, one row per city.
pub fn modal_matrix(cities: &[CityIndicators]) -> DMatrix<f64> {
    DMatrix::from_fn(cities.len(), MODES.len(), |i, j| cities[i].shares()[j])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Column j is the j-th principal axis.
    pub loadings: DMatrix<f64>,
    /// Centred (and optionally scaled) data projected on the loadings.
    pub scores: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub explained_variance: Vec<f64>,
    pub means: Vec<f64>,
    /// Column scales applied before projection (all ones when unscaled).
    pub scales: Vec<f64>,
}

impl Pca {
    pub fn explained_ratio(&self) -> Vec<f64> {
        let total: f64 = self.explained_variance.iter().sum();
        self.explained_variance.iter().map(|v| v / total).collect()
    }

    /// Centred, scaled data recovered from all components.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.scores * self.loadings.transpose()
    }
}

/// Principal components of the sample covariance, or of the correlation
/// matrix when `standardize` is set. Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca(data: &DMatrix<f64>, standardize: bool) -> Result<Pca, CityStatsError> {
    let (n, p) = data.shape();
    if n < 2 || p == 0 {
        return Err(CityStatsError::TooFewRows { need: 2, got: n });
    }
    let means: Vec<f64> = (0..p).map(|j| data.column(j).mean()).collect();
    let mut x = data.clone();
    for j in 0..p {
        for v in x.column_mut(j).iter_mut() {
            *v -= means[j];
        }
    }
    let mut scales = vec![1.0; p];
    if standardize {
        for (j, scale) in scales.iter_mut().enumerate() {
            let sd = (x.column(j).norm_squared() / (n - 1) as f64).sqrt();
            if sd == 0.0 {
                return Err(CityStatsError::ZeroVariance(j));
            }
            *scale = sd;
            x.column_mut(j).unscale_mut(sd);
        }
    }
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut loadings = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        loadings.set_column(dst, &col);
    }
    let explained_variance = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let scores = &x * &loadings;
    Ok(Pca {
        loadings,
        scores,
        explained_variance,
        means,
        scales,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wss: f64,
    /// WSS after every assignment step, ending with the final WSS.
    pub wss_history: Vec<f64>,
    pub iterations: usize,
}

const MAX_LLOYD_ITERATIONS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<(), CityStatsError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(CityStatsError::InvalidK { k, n });
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(CityStatsError::Ragged);
    }
    Ok(())
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn wss_of(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&w| {
                    acc += w;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids until the assignment stops
/// changing. A centroid left without points moves to the point farthest from
/// its current centroid.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Result<KMeansResult, CityStatsError> {
    let k = centroids.len();
    check_points(points, k)?;
    let dim = points[0].len();
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        history.push(wss_of(points, &next, &centroids));
        if next == assignment || iterations >= MAX_LLOYD_ITERATIONS {
            assignment = next;
            break;
        }
        assignment = next;
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            sizes[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        for c in (0..k).filter(|&c| sizes[c] == 0) {
            let far = (0..points.len())
                .fold((0, f64::NEG_INFINITY), |best, i| {
                    let d = sq_dist(&points[i], &centroids[assignment[i]]);
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                })
                .0;
            log::debug!("k-means cluster {c} emptied; reseeding at point {far}");
            centroids[c] = points[far].clone();
        }
    }
    let wss = wss_of(points, &assignment, &centroids);
    history.push(wss);
    Ok(KMeansResult {
        k,
        assignment,
        centroids,
        wss,
        wss_history: history,
        iterations,
    })
}

/// k-means with k-means++ seeding drawn from `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, CityStatsError> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lloyd(points, plus_plus_init(points, k, &mut rng))
}

/// Lowest WSS over `restarts` seeds; ties keep the earliest restart.
pub fn kmeans_best(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult, CityStatsError> {
    let runs: Vec<KMeansResult> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans(points, k, seed.wrapping_add(r)))
        .collect::<Result<_, _>>()?;
    Ok(runs
        .into_iter()
        .reduce(|a, b| if b.wss < a.wss { b } else { a })
        .expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssSelection {
    pub k: usize,
    /// (k, best WSS) for every evaluated k.
    pub wss: Vec<(usize, f64)>,
    pub model: KMeansResult,
}

pub const DEFAULT_ELBOW_THRESHOLD: f64 = 0.2;

/// Elbow rule: the smallest k whose relative WSS gain from k to k + 1 falls
/// below `threshold`. Each k also starts once from the k - 1 solution plus
/// its worst-fitted point, which keeps WSS non-increasing in k.
pub fn select_k_wss(
    points: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
    threshold: f64,
) -> Result<WssSelection, CityStatsError> {
    let k_max = k_max.min(points.len());
    if k_min == 0 || k_min > k_max {
        return Err(CityStatsError::InvalidK {
            k: k_min,
            n: points.len(),
        });
    }
    let mut models: Vec<KMeansResult> = Vec::new();
    for k in k_min..=k_max {
        let mut best = kmeans_best(points, k, restarts, seed.wrapping_add(1000 * k as u64))?;
        if let Some(prev) = models.last() {
            let worst = (0..points.len())
                .fold((0, f64::NEG_INFINITY), |b, i| {
                    let d = sq_dist(&points[i], &prev.centroids[prev.assignment[i]]);
                    if d > b.1 {
                        (i, d)
                    } else {
                        b
                    }
                })
                .0;
            let mut init = prev.centroids.clone();
            init.push(points[worst].clone());
            let warm = lloyd(points, init)?;
            if warm.wss < best.wss {
                best = warm;
            }
        }
        models.push(best);
    }
    let wss: Vec<(usize, f64)> = models.iter().map(|m| (m.k, m.wss)).collect();
    let chosen = wss
        .windows(2)
        .find(|w| w[0].1 <= 0.0 || (w[0].1 - w[1].1) / w[0].1 < threshold)
        .map_or(k_max, |w| w[0].0);
    let model = models.swap_remove(chosen - k_min);
    Ok(WssSelection { k: chosen, wss, model })
}
