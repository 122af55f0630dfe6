//! K-means with k-means++ seeding, silhouette scores and elbow scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::{mean, std_dev, Matrix};

pub const DEFAULT_RESTARTS: usize = 5;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Matrix,
    pub inertia: f64,
    pub n_iter: usize,
    pub seed: u64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl KMeansModel {
    pub fn assign(&self, m: &Matrix) -> Vec<usize> {
        m.rows().map(|r| nearest(r, &self.centroids).0).collect()
    }
}

fn inertia(m: &Matrix, centroids: &Matrix, assign: &[usize]) -> f64 {
    m.rows().zip(assign).map(|(r, &a)| sq_dist(r, centroids.row(a))).sum()
}

fn plus_plus_init(m: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = m.n_rows();
    let mut centroids = Matrix::zeros(0, m.n_cols());
    let first = rng.random_range(0..n);
    centroids.push_row(m.row(first)).expect("width matches");
    let mut d2: Vec<f64> = m.rows().map(|r| sq_dist(r, m.row(first))).collect();
    while centroids.n_rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            rng.random_range(0..n)
        };
        centroids.push_row(m.row(pick)).expect("width matches");
        for (i, r) in m.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, m.row(pick)));
        }
    }
    centroids
}

/// Means of the assigned rows. An empty cluster takes the point farthest from its
/// current centroid (ties to the lowest index), which is moved into it first.
fn update(m: &Matrix, prev: &Matrix, assign: &mut [usize]) -> Matrix {
    let k = prev.n_rows();
    let p = m.n_cols();
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            let mut sums = Matrix::zeros(k, p);
            for (r, &a) in m.rows().zip(assign.iter()) {
                for (s, x) in sums.row_mut(a).iter_mut().zip(r) {
                    *s += x;
                }
            }
            for (j, &c) in counts.iter().enumerate() {
                sums.row_mut(j).iter_mut().for_each(|s| *s /= c as f64);
            }
            return sums;
        };
        let mut far = (usize::MAX, -1.0);
        for (i, r) in m.rows().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(r, prev.row(assign[i]));
            if d > far.1 {
                far = (i, d);
            }
        }
        assign[far.0] = empty;
    }
}

fn lloyd(m: &Matrix, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>, Vec<f64>, usize) {
    let mut centroids = plus_plus_init(m, k, rng);
    let mut assign: Vec<usize> = m.rows().map(|r| nearest(r, &centroids).0).collect();
    let mut history = vec![inertia(m, &centroids, &assign)];
    let mut n_iter = 0;
    while n_iter < max_iter {
        n_iter += 1;
        centroids = update(m, &centroids, &mut assign);
        let mut changed = false;
        for (i, r) in m.rows().enumerate() {
            let (j, d) = nearest(r, &centroids);
            // Move only on a strict improvement so ties cannot cycle.
            if j != assign[i] && d < sq_dist(r, centroids.row(assign[i])) {
                assign[i] = j;
                changed = true;
            }
        }
        history.push(inertia(m, &centroids, &assign));
        if !changed {
            break;
        }
    }
    (centroids, assign, history, n_iter)
}

/// K-means with `DEFAULT_RESTARTS` k-means++ restarts, keeping the lowest inertia.
pub fn kmeans_fit(m: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    kmeans_fit_restarts(m, k, seed, max_iter, DEFAULT_RESTARTS)
}

/// Restart `r` draws from ChaCha stream `r` of `seed`; ties in inertia go to the
/// earliest restart.
pub fn kmeans_fit_restarts(m: &Matrix, k: usize, seed: u64, max_iter: usize, restarts: usize) -> Result<KMeansModel> {
    let n = m.n_rows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} points")));
    }
    if restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means inputs contain missing or non-finite values"));
    }
    let runs: Vec<_> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(m, k, max_iter, &mut rng)
        })
        .collect();
    let (best, _) = runs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, run)| {
            let j = *run.2.last().expect("history is never empty");
            if j < acc.1 { (i, j) } else { acc }
        });
    let (centroids, _, history, n_iter) = runs.into_iter().nth(best).expect("index in range");
    Ok(KMeansModel { k, centroids, inertia: *history.last().unwrap(), n_iter, seed, history })
}

/// Mean silhouette. Points alone in their cluster score 0, as do points with
/// `a = b = 0`. Cluster ids need not be contiguous; at least two must occur.
pub fn silhouette(m: &Matrix, assign: &[usize]) -> Result<f64> {
    let n = m.n_rows();
    if assign.len() != n {
        return Err(Error::invalid("assignment count does not match rows"));
    }
    let k = assign.iter().max().map_or(0, |&a| a + 1);
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&a| sizes[a] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assign[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let ri = m.row(i);
            for (j, rj) in m.rows().enumerate() {
                if j != i {
                    sums[assign[j]] += sq_dist(ri, rj).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let d = a.max(b);
            if d > 0.0 { (b - a) / d } else { 0.0 }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub k: usize,
    pub inertia: f64,
    /// `None` for k = 1.
    pub silhouette: Option<f64>,
}

/// Inertia for each k, all fits sharing `seed`.
pub fn elbow_scan(m: &Matrix, ks: &[usize], seed: u64) -> Result<Vec<(usize, f64)>> {
    if ks.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    ks.iter()
        .map(|&k| kmeans_fit(m, k, seed, DEFAULT_MAX_ITER).map(|f| (k, f.inertia)))
        .collect()
}

/// The k with the largest second difference of inertia; ties go to the smaller k.
/// Endpoints of the scan cannot be chosen.
pub fn elbow_point(scan: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for w in scan.windows(3) {
        let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if best.is_none_or(|(_, b)| d2 > b) {
            best = Some((w[1].0, d2));
        }
    }
    best.map(|(k, _)| k)
}

/// Inertia and silhouette for each k.
pub fn cluster_scan(m: &Matrix, ks: &[usize], seed: u64) -> Result<Vec<ScanEntry>> {
    if ks.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    ks.iter()
        .map(|&k| {
            let f = kmeans_fit(m, k, seed, DEFAULT_MAX_ITER)?;
            let silhouette = if k > 1 { Some(silhouette(m, &f.assign(m))?) } else { None };
            Ok(ScanEntry { k, inertia: f.inertia, silhouette })
        })
        .collect()
}

/// The k with the highest silhouette; ties go to the smaller k.
pub fn silhouette_best(scan: &[ScanEntry]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for e in scan {
        if let Some(s) = e.silhouette {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e.k, s));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// Per-column affine scaling applied before clustering: numeric columns are
/// standardized, indicator columns pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScaling {
    pub schema: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ClusterScaling {
    pub fn fit(fm: &FeatureMatrix) -> Self {
        let (mut mu, mut sd) = (Vec::new(), Vec::new());
        for (j, c) in fm.columns().iter().enumerate() {
            if c.kind.is_indicator() {
                mu.push(0.0);
                sd.push(1.0);
            } else {
                let col = fm.matrix().column(j);
                let s = std_dev(&col);
                mu.push(mean(&col));
                sd.push(if s > 0.0 { s } else { 1.0 });
            }
        }
        ClusterScaling { schema: fm.column_names(), mean: mu, scale: sd }
    }

    pub fn apply(&self, fm: &FeatureMatrix) -> Result<Matrix> {
        fm.check_schema(&self.schema)?;
        let mut out = fm.matrix().clone();
        for i in 0..out.n_rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(out)
    }
}

/// K-means on scaled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clusterer {
    pub scaling: ClusterScaling,
    pub kmeans: KMeansModel,
}

impl Clusterer {
    pub fn fit(fm: &FeatureMatrix, k: usize, seed: u64) -> Result<Self> {
        let scaling = ClusterScaling::fit(fm);
        let kmeans = kmeans_fit(&scaling.apply(fm)?, k, seed, DEFAULT_MAX_ITER)?;
        Ok(Clusterer { scaling, kmeans })
    }

    pub fn assign(&self, fm: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self.kmeans.assign(&self.scaling.apply(fm)?))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use rand_distr::{Distribution, Normal};

    use crate::matrix::Matrix;
    use crate::testutil::rng;

    /// `per` points around each of four corners of a square of side `sep`.
    pub fn four_blobs(per: usize, sep: f64, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let centers = [(0.0, 0.0), (sep, 0.0), (0.0, sep), (sep, sep)];
        let noise = Normal::new(0.0, spread).unwrap();
        let mut r = rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..per {
                let dx: f64 = noise.sample(&mut r);
                let dy: f64 = noise.sample(&mut r);
                rows.push(vec![x + dx, y + dy]);
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }
}
