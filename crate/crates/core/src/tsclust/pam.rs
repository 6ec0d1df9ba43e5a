use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DistanceMatrix, TsclustError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Point indices of the medoids, ascending.
    pub medoids: Vec<usize>,
    /// Cluster label of each point, indexing `medoids`.
    pub assignment: Vec<usize>,
    pub total_cost: f64,
    pub swaps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
}

/// Sum over points of the distance to the nearest medoid, in index order.
pub fn medoid_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Nearest-medoid labels. A medoid keeps itself; other ties go to the
/// lowest-index medoid.
pub fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..d.len())
        .map(|i| {
            if let Some(pos) = medoids.iter().position(|&m| m == i) {
                return pos;
            }
            let mut best = 0;
            for (pos, &m) in medoids.iter().enumerate().skip(1) {
                if d.get(i, m) < d.get(i, medoids[best]) {
                    best = pos;
                }
            }
            best
        })
        .collect()
}

fn build(d: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = d.len();
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|c| !medoids.contains(c)) {
            let cost: f64 = (0..n).map(|i| nearest[i].min(d.get(i, c))).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        let (c, _) = best.expect("k <= n leaves a candidate");
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(d.get(i, c));
        }
        medoids.push(c);
    }
    medoids
}

/// Partitioning around medoids: greedy BUILD, then best-improvement SWAP until
/// no swap strictly lowers the total cost. Ties resolve to the lowest index.
pub fn pam_cluster(d: &DistanceMatrix, k: usize) -> Result<ClusterModel, TsclustError> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(TsclustError::InvalidK { k, n });
    }
    let mut medoids = build(d, k);
    let mut cost = medoid_cost(d, &medoids);
    let mut swaps = 0;
    loop {
        let candidates: Vec<(usize, usize)> = (0..k)
            .flat_map(|slot| (0..n).map(move |h| (slot, h)))
            .filter(|&(_, h)| !medoids.contains(&h))
            .collect();
        let best = candidates
            .par_iter()
            .map(|&(slot, h)| {
                let mut trial = medoids.clone();
                trial[slot] = h;
                (medoid_cost(d, &trial), slot, h)
            })
            .reduce_with(|a, b| {
                // deterministic: lower cost, then lower medoid slot, then lower index
                if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            });
        match best {
            Some((c, slot, h)) if c < cost => {
                medoids[slot] = h;
                cost = c;
                swaps += 1;
            }
            _ => break,
        }
    }
    medoids.sort_unstable();
    let assignment = assign(d, &medoids);
    let cost = medoid_cost(d, &medoids);
    Ok(ClusterModel {
        k,
        medoids,
        assignment,
        total_cost: cost,
        swaps,
        silhouette: None,
    })
}

/// Mean silhouette width. Points in singleton clusters score 0.
pub fn silhouette(d: &DistanceMatrix, assignment: &[usize]) -> Result<f64, TsclustError> {
    let n = d.len();
    if assignment.len() != n || n == 0 {
        return Err(TsclustError::InvalidAssignment(format!(
            "{} labels for {} points",
            assignment.len(),
            n
        )));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(TsclustError::InvalidAssignment(format!("cluster {empty} is empty")));
    }
    if k < 2 {
        return Err(TsclustError::SingleCluster);
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, &c) in assignment.iter().enumerate() {
                sums[c] += d.get(i, j);
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub model: ClusterModel,
    /// (k, mean silhouette, total cost) for every evaluated k.
    pub table: Vec<(usize, f64, f64)>,
}

/// Runs PAM for every k in `k_min..=k_max` (capped at n - 1) and keeps the
/// best mean silhouette, preferring the smaller k on ties.
pub fn select_k(d: &DistanceMatrix, k_min: usize, k_max: usize) -> Result<KSelection, TsclustError> {
    let n = d.len();
    let hi = k_max.min(n.saturating_sub(1));
    if k_min < 2 || k_min > hi {
        return Err(TsclustError::InvalidK { k: k_min, n });
    }
    let mut table = Vec::new();
    let mut best: Option<ClusterModel> = None;
    for k in k_min..=hi {
        let mut model = pam_cluster(d, k)?;
        let s = silhouette(d, &model.assignment)?;
        model.silhouette = Some(s);
        table.push((k, s, model.total_cost));
        if best
            .as_ref()
            .is_none_or(|b| s > b.silhouette.unwrap_or(f64::NEG_INFINITY))
        {
            best = Some(model);
        }
    }
    let model = best.expect("non-empty k range");
    Ok(KSelection {
        k: model.k,
        model,
        table,
    })
}
