//! Lloyd's K-means with k-means++ seeding and independent restarts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 100,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `K x dim`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
    pub iterations: usize,
    /// Index of the winning restart.
    pub restart: usize,
    /// WCSS after every Lloyd iteration of the winning restart.
    pub wcss_trace: Vec<f64>,
}

/// Row-major copy of the points for cache-friendly distance loops.
struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    fn from_rows(rows: &DMatrix<f64>) -> Self {
        let dim = rows.ncols();
        let mut data = Vec::with_capacity(rows.len());
        for row in rows.row_iter() {
            data.extend(row.iter());
        }
        Points { data, dim }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters the rows of `rows` into `k` groups. The best of
/// `params.n_init` restarts by (WCSS, restart index) is returned, so the
/// result does not depend on thread scheduling.
pub fn kmeans(rows: &DMatrix<f64>, k: usize, params: &KMeansParams, seed: u64) -> Result<KMeansResult> {
    let n = rows.nrows();
    if k == 0 {
        return Err(FscError::InvalidConfig("K must be positive".into()));
    }
    if k > n {
        return Err(FscError::TooMany {
            requested: k,
            available: n,
        });
    }
    if params.max_iter == 0 || params.n_init == 0 {
        return Err(FscError::InvalidConfig("max_iter and n_init must be positive".into()));
    }
    let points = Points::from_rows(rows);

    let runs: Vec<KMeansResult> = (0..params.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut run = lloyd(&points, n, k, params.max_iter, &mut rng);
            run.restart = r;
            run
        })
        .collect();

    Ok(runs
        .into_iter()
        .min_by(|a, b| a.wcss.total_cmp(&b.wcss).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart"))
}

fn plus_plus(points: &Points, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = points.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.extend(c);
    }
    centroids
}

fn lloyd(points: &Points, n: usize, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let dim = points.dim;
    let mut centroids = plus_plus(points, n, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let x = points.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
            dist[i] = best.1;
        }
        changed |= repair_empty(points, &mut labels, &mut dist, &mut centroids, k);
        if !changed {
            break;
        }
        update_centroids(points, &labels, k, &mut centroids);
        trace.push(wcss_of(points, &labels, &centroids));
    }

    let wcss = *trace.last().expect("at least one iteration");
    KMeansResult {
        labels,
        centroids: DMatrix::from_row_slice(k, dim, &centroids),
        wcss,
        iterations,
        restart: 0,
        wcss_trace: trace,
    }
}

/// Moves the point farthest from its centroid into each empty cluster,
/// taking only from clusters with more than one member.
fn repair_empty(points: &Points, labels: &mut [usize], dist: &mut [f64], centroids: &mut [f64], k: usize) -> bool {
    let dim = points.dim;
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut changed = false;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = donor else { break };
        sizes[labels[i]] -= 1;
        sizes[empty] = 1;
        labels[i] = empty;
        dist[i] = 0.0;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(points.row(i));
        changed = true;
    }
    changed
}

fn update_centroids(points: &Points, labels: &[usize], k: usize, centroids: &mut [f64]) {
    let dim = points.dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = s / counts[c] as f64;
            }
        }
    }
}

fn wcss_of(points: &Points, labels: &[usize], centroids: &[f64]) -> f64 {
    let dim = points.dim;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn wcss(rows: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<f64> {
    if labels.len() != rows.nrows() {
        return Err(FscError::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.nrows()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(FscError::LabelOutOfRange { label: l, k });
    }
    let points = Points::from_rows(rows);
    let mut centroids = vec![0.0; k * points.dim];
    update_centroids(&points, labels, k, &mut centroids);
    Ok(wcss_of(&points, labels, &centroids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, spread: f64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = centers.len() * per;
        let mut rows = DMatrix::zeros(n, 2);
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for p in 0..per {
                let i = c * per + p;
                for d in 0..2 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    rows[(i, d)] = center[d] + spread * z;
                }
                truth.push(c);
            }
        }
        (rows, truth)
    }

    #[test]
    fn separable_blobs() {
        let (rows, truth) = blobs(1, &[[0.0, 0.0], [10.0, 10.0]], 50, 0.5);
        let res = kmeans(&rows, 2, &KMeansParams::default(), 3).unwrap();
        let flip = res.labels[0] != truth[0];
        for (l, t) in res.labels.iter().zip(&truth) {
            assert_eq!(*l == *t, !flip);
        }
    }

    #[test]
    fn single_cluster_is_total_variance() {
        let (rows, _) = blobs(2, &[[1.0, -1.0]], 30, 1.0);
        let res = kmeans(&rows, 1, &KMeansParams::default(), 0).unwrap();
        assert!(res.labels.iter().all(|&l| l == 0));
        let mean = rows.row_mean();
        let total: f64 = rows.row_iter().map(|r| (r - &mean).norm_squared()).sum();
        assert!((res.wcss - total).abs() < 1e-10);
    }

    #[test]
    fn six_points_reach_exhaustive_minimum() {
        let rows = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 1.1, 5.0, 5.0, 4.2, 6.0, 9.0, 0.5]);
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 6) - 1 {
            let labels: Vec<usize> = (0..6).map(|i| ((mask >> i) & 1) as usize).collect();
            best = best.min(wcss(&rows, &labels, 2).unwrap());
        }
        let res = kmeans(&rows, 2, &KMeansParams::default(), 9).unwrap();
        assert!((res.wcss - best).abs() < 1e-12);
    }

    #[test]
    fn wcss_examples() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0]);
        assert_eq!(wcss(&rows, &[0, 1, 2], 3).unwrap(), 0.0);
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(wcss(&same, &[0, 0, 0], 1).unwrap(), 0.0);
        // Two clusters {0, 2} and {1}: mean of rows 0 and 2 is (0, 1).
        let direct = (1.0f64 + 1.0) + (1.0 + 1.0);
        assert!((wcss(&rows, &[0, 1, 0], 2).unwrap() - direct).abs() < 1e-12);
        assert!(wcss(&rows, &[0, 3, 0], 2).is_err());
    }

    #[test]
    fn trace_is_monotone_and_clusters_nonempty() {
        let (rows, _) = blobs(5, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 40, 1.2);
        for seed in 0..10 {
            let res = kmeans(&rows, 6, &KMeansParams::default(), seed).unwrap();
            assert!(res.wcss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            for c in 0..6 {
                assert!(res.labels.contains(&c));
            }
        }
    }

    #[test]
    fn identical_points_fill_every_cluster() {
        let rows = DMatrix::zeros(4, 3);
        let res = kmeans(&rows, 4, &KMeansParams::default(), 0).unwrap();
        let mut labels = res.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rotation_leaves_wcss_unchanged() {
        let (rows, _) = blobs(6, &[[0.0, 0.0], [8.0, 1.0], [2.0, 9.0]], 30, 0.7);
        let base = kmeans(&rows, 3, &KMeansParams::default(), 1).unwrap();
        for t in [0.3f64, 1.1, 2.5] {
            let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            let res = kmeans(&(&rows * rot), 3, &KMeansParams::default(), 1).unwrap();
            assert!((res.wcss - base.wcss).abs() <= 1e-9 * base.wcss);
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let (rows, _) = blobs(7, &[[0.0, 0.0], [2.0, 2.0]], 100, 1.5);
        let a = kmeans(&rows, 3, &KMeansParams::default(), 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| kmeans(&rows, 3, &KMeansParams::default(), 4).unwrap());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.restart, b.restart);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans(&DMatrix::zeros(2, 2), 3, &KMeansParams::default(), 0).is_err());
    }
}
