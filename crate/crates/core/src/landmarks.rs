//! Landmark selection: uniform sampling or K-medoids centers.
//!
//! The K-medoids variant follows Park and Jun's "simple and fast" scheme
//! with Manhattan distance: medoids are initialized from the points with the
//! smallest normalized total distance, then assignment and per-cluster medoid
//! updates alternate until the medoids stop moving.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkMethod {
    Uniform,
    KMedoids,
}

impl std::str::FromStr for LandmarkMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(LandmarkMethod::Uniform),
            "kmedoids" | "k-medoids" => Ok(LandmarkMethod::KMedoids),
            _ => Err(format!("unknown sampling method {s:?}")),
        }
    }
}

/// A subset of dataset columns used as the coding dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    indices: Vec<usize>,
    landmarks: DMatrix<f64>,
    method: LandmarkMethod,
}

impl LandmarkSet {
    /// Extracts the given columns; indices are sorted and must be distinct.
    pub fn from_indices(data: &Dataset, mut indices: Vec<usize>, method: LandmarkMethod) -> Result<Self> {
        if indices.is_empty() {
            return Err(FscError::InvalidConfig("landmark set is empty".into()));
        }
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(FscError::InvalidConfig(format!("duplicate landmark index {}", w[0])));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(FscError::IndexOutOfRange {
                index: bad,
                len: data.len(),
            });
        }
        let landmarks = data.points().select_columns(indices.iter());
        Ok(LandmarkSet {
            indices,
            landmarks,
            method,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// The `D x m` dictionary.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.landmarks
    }

    pub fn method(&self) -> LandmarkMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of dataset point `j` among the landmarks, if it is one.
    pub fn atom_of(&self, j: usize) -> Option<usize> {
        self.indices.binary_search(&j).ok()
    }
}

fn check_count(data: &Dataset, m: usize) -> Result<()> {
    if m == 0 {
        return Err(FscError::InvalidConfig("number of landmarks must be positive".into()));
    }
    if m > data.len() {
        return Err(FscError::TooMany {
            requested: m,
            available: data.len(),
        });
    }
    Ok(())
}

/// `m` distinct points drawn uniformly without replacement.
pub fn select_uniform(data: &Dataset, m: usize, seed: u64) -> Result<LandmarkSet> {
    check_count(data, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = index::sample(&mut rng, data.len(), m).into_vec();
    LandmarkSet::from_indices(data, indices, LandmarkMethod::Uniform)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMedoidsParams {
    pub max_iter: usize,
    /// Upper bound on the number of candidate points used by initialization
    /// scoring and the medoid update search. Assignment always uses all points.
    pub pool_cap: usize,
}

impl Default for KMedoidsParams {
    fn default() -> Self {
        KMedoidsParams {
            max_iter: 100,
            pool_cap: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMedoids {
    /// Medoid point indices, ascending.
    pub medoids: Vec<usize>,
    /// Position in `medoids` of each point's medoid.
    pub assignment: Vec<usize>,
    /// Total cost after the initial assignment and after every update.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMedoids {
    pub fn cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace is never empty")
    }
}

/// K-medoids landmarks: the `m` medoids of an ℓ1 K-medoids partition.
pub fn select_kmedoids(data: &Dataset, m: usize, params: &KMedoidsParams, seed: u64) -> Result<LandmarkSet> {
    let run = kmedoids(data, m, params, seed)?;
    LandmarkSet::from_indices(data, run.medoids, LandmarkMethod::KMedoids)
}

#[inline]
pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn kmedoids(data: &Dataset, m: usize, params: &KMedoidsParams, seed: u64) -> Result<KMedoids> {
    check_count(data, m)?;
    if params.max_iter == 0 {
        return Err(FscError::InvalidConfig("max_iter must be positive".into()));
    }
    let n = data.len();
    let pool = candidate_pool(n, m, params.pool_cap, seed);
    let in_pool = {
        let mut mask = vec![pool.len() == n; n];
        if pool.len() < n {
            pool.iter().for_each(|&i| mask[i] = true);
        }
        mask
    };

    let mut medoids = initial_medoids(data, &pool, m);
    let (mut assignment, mut dist) = assign_with_repair(data, &mut medoids);
    let mut cost_trace = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        iterations += 1;
        let mut updated = update_medoids(data, &medoids, &assignment, &in_pool);
        updated.sort_unstable();
        if updated == medoids {
            converged = true;
            break;
        }
        medoids = updated;
        (assignment, dist) = assign_with_repair(data, &mut medoids);
        cost_trace.push(dist.iter().sum());
    }

    Ok(KMedoids {
        medoids,
        assignment,
        cost_trace,
        iterations,
        converged,
    })
}

fn candidate_pool(n: usize, m: usize, cap: usize, seed: u64) -> Vec<usize> {
    let size = n.min(cap.max(m));
    if size == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = index::sample(&mut rng, n, size).into_vec();
    pool.sort_unstable();
    pool
}

/// The `m` pool points with the smallest `v_j = sum_i d(i, j) / sum_l d(i, l)`.
fn initial_medoids(data: &Dataset, pool: &[usize], m: usize) -> Vec<usize> {
    let row_sums: Vec<f64> = pool
        .par_iter()
        .map(|&i| {
            let xi = data.column(i);
            pool.iter().map(|&l| manhattan(xi, data.column(l))).sum()
        })
        .collect();
    let scores: Vec<f64> = pool
        .par_iter()
        .map(|&j| {
            let xj = data.column(j);
            pool.iter()
                .zip(&row_sums)
                .filter(|(_, &s)| s > 0.0)
                .map(|(&i, &s)| manhattan(data.column(i), xj) / s)
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(pool[a].cmp(&pool[b])));
    let mut medoids: Vec<usize> = order[..m].iter().map(|&p| pool[p]).collect();
    medoids.sort_unstable();
    medoids
}

/// Nearest medoid per point, lowest medoid position on ties.
fn assign(data: &Dataset, medoids: &[usize]) -> (Vec<usize>, Vec<f64>) {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let xi = data.column(i);
            let mut best = (0, f64::INFINITY);
            for (k, &c) in medoids.iter().enumerate() {
                let d = manhattan(xi, data.column(c));
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .unzip()
}

/// Assigns points and reseeds empty clusters at the non-medoid point farthest
/// from its medoid, repeating until every cluster is populated or no
/// candidate remains. Leaves `medoids` sorted.
fn assign_with_repair(data: &Dataset, medoids: &mut Vec<usize>) -> (Vec<usize>, Vec<f64>) {
    loop {
        let (assignment, dist) = assign(data, medoids);
        let mut sizes = vec![0usize; medoids.len()];
        assignment.iter().for_each(|&k| sizes[k] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return (assignment, dist);
        };
        let farthest = (0..data.len())
            .filter(|i| medoids.binary_search(i).is_err())
            .fold(None, |best: Option<(usize, f64)>, i| match best {
                Some((_, d)) if d >= dist[i] => best,
                _ => Some((i, dist[i])),
            });
        match farthest {
            Some((i, _)) => {
                medoids[empty] = i;
                medoids.sort_unstable();
            }
            None => return (assignment, dist),
        }
    }
}

/// Per cluster, the candidate member with the smallest total distance to all
/// members. The current medoid is always a candidate, so no update raises the cost.
fn update_medoids(data: &Dataset, medoids: &[usize], assignment: &[usize], in_pool: &[bool]) -> Vec<usize> {
    let mut members = vec![Vec::new(); medoids.len()];
    for (i, &k) in assignment.iter().enumerate() {
        members[k].push(i);
    }
    members
        .par_iter()
        .zip(medoids.par_iter())
        .map(|(cluster, &current)| {
            let mut best = (current, f64::INFINITY);
            for &c in cluster.iter().filter(|&&c| c == current || in_pool[c]) {
                let xc = data.column(c);
                let cost: f64 = cluster.iter().map(|&i| manhattan(data.column(i), xc)).sum();
                if cost < best.1 || (cost == best.1 && c < best.0) {
                    best = (c, cost);
                }
            }
            best.0
        })
        .collect()
}

/// Total ℓ1 distance from every point to its nearest medoid.
pub fn kmedoids_cost(data: &Dataset, medoid_indices: &[usize]) -> Result<f64> {
    if medoid_indices.is_empty() {
        return Err(FscError::InvalidConfig("no medoids given".into()));
    }
    let mut sorted = medoid_indices.to_vec();
    sorted.sort_unstable();
    if let Some(&bad) = sorted.iter().find(|&&i| i >= data.len()) {
        return Err(FscError::IndexOutOfRange {
            index: bad,
            len: data.len(),
        });
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(FscError::InvalidConfig("medoid indices must be distinct".into()));
    }
    Ok(assign(data, medoid_indices).1.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn line(xs: &[f64]) -> Dataset {
        Dataset::from_samples(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), None).unwrap()
    }

    fn brute_force_optimum(data: &Dataset, m: usize) -> f64 {
        fn rec(data: &Dataset, m: usize, start: usize, cur: &mut Vec<usize>, best: &mut f64) {
            if cur.len() == m {
                let cost: f64 = data
                    .columns()
                    .map(|x| cur.iter().map(|&c| manhattan(x, data.column(c))).fold(f64::INFINITY, f64::min))
                    .sum();
                *best = best.min(cost);
                return;
            }
            for i in start..data.len() {
                cur.push(i);
                rec(data, m, i + 1, cur, best);
                cur.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(data, m, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn uniform_all_points() {
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        for seed in 0..5 {
            let l = select_uniform(&d, 5, seed).unwrap();
            assert_eq!(l.indices(), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn uniform_distinct_and_deterministic() {
        let d = generate(&SynthConfig::reference(0)).unwrap();
        let a = select_uniform(&d, 200, 11).unwrap();
        assert_eq!(a.len(), 200);
        assert!(a.indices().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, select_uniform(&d, 200, 11).unwrap());
        for (j, &i) in a.indices().iter().enumerate() {
            assert_eq!(a.matrix().column(j).as_slice(), d.column(i));
        }
        assert!(matches!(select_uniform(&d, 3601, 0), Err(FscError::TooMany { .. })));
    }

    #[test]
    fn kmedoids_two_groups() {
        let d = line(&[0.0, 1.0, 10.0, 11.0]);
        let run = kmedoids(&d, 2, &KMedoidsParams::default(), 0).unwrap();
        assert!(run.medoids[0] <= 1 && run.medoids[1] >= 2);
        assert_eq!(run.cost(), brute_force_optimum(&d, 2));
        assert_eq!(run.cost(), 2.0);
    }

    #[test]
    fn kmedoids_every_point_a_medoid() {
        let d = line(&[3.0, -1.0, 4.0, 1.5, 9.0]);
        let run = kmedoids(&d, 5, &KMedoidsParams::default(), 0).unwrap();
        assert_eq!(run.medoids, vec![0, 1, 2, 3, 4]);
        assert_eq!(run.cost(), 0.0);
    }

    #[test]
    fn kmedoids_duplicated_points() {
        let base = [0.0, 1.0, 10.0, 11.0];
        let dedup = line(&base);
        let dup = line(&[0.0, 1.0, 10.0, 11.0, 0.0, 1.0, 10.0, 11.0]);
        let optimum = brute_force_optimum(&dedup, 2);
        let run = kmedoids(&dup, 2, &KMedoidsParams::default(), 0).unwrap();
        assert_eq!(run.cost(), 2.0 * optimum);
        assert_eq!(brute_force_optimum(&dup, 2), 2.0 * optimum);
        let medoid_points: Vec<usize> = run.medoids.iter().map(|&i| i % 4).collect();
        assert_eq!(kmedoids_cost(&dedup, &medoid_points).unwrap(), optimum);
    }

    #[test]
    fn cost_examples() {
        let d = line(&[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(kmedoids_cost(&d, &[0, 2]).unwrap(), 2.0);
        assert_eq!(kmedoids_cost(&d, &[0, 1, 2, 3]).unwrap(), 0.0);
        assert!(kmedoids_cost(&d, &[0, 4]).is_err());
        assert!(kmedoids_cost(&d, &[1, 1]).is_err());

        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![(i * 7 % 5) as f64, (i * i) as f64 * 0.3]).collect();
        let d = Dataset::from_samples(&pts, None).unwrap();
        let mut expected = 0.0;
        for p in &pts {
            let mut best = f64::INFINITY;
            for &c in &[1usize, 4] {
                let dist: f64 = p.iter().zip(&pts[c]).map(|(a, b)| (a - b).abs()).sum();
                best = best.min(dist);
            }
            expected += best;
        }
        assert!((kmedoids_cost(&d, &[1, 4]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cost_trace_monotone_and_fixed_point() {
        let d = generate(&SynthConfig::uniform(6, 3, 2, 60, 0.05, 2)).unwrap();
        let run = kmedoids(&d, 12, &KMedoidsParams::default(), 1).unwrap();
        assert!(run.converged);
        assert!(run.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!((kmedoids_cost(&d, &run.medoids).unwrap() - run.cost()).abs() < 1e-9);

        for (k, &med) in run.medoids.iter().enumerate() {
            let members: Vec<usize> = (0..d.len()).filter(|&i| run.assignment[i] == k).collect();
            let within = |c: usize| -> f64 { members.iter().map(|&i| manhattan(d.column(i), d.column(c))).sum() };
            let own = within(med);
            for &c in &members {
                assert!(within(c) >= own - 1e-12);
            }
        }
    }

    #[test]
    fn kmedoids_respects_pool_cap() {
        let d = generate(&SynthConfig::uniform(6, 3, 2, 100, 0.05, 3)).unwrap();
        let params = KMedoidsParams {
            max_iter: 100,
            pool_cap: 50,
        };
        let run = kmedoids(&d, 10, &params, 9).unwrap();
        assert_eq!(run.medoids.len(), 10);
        assert!(run.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let again = kmedoids(&d, 10, &params, 9).unwrap();
        assert_eq!(run.medoids, again.medoids);
    }

    #[test]
    fn kmedoids_errors() {
        let d = line(&[0.0, 1.0]);
        assert!(kmedoids(&d, 3, &KMedoidsParams::default(), 0).is_err());
        let p = KMedoidsParams {
            max_iter: 0,
            ..Default::default()
        };
        assert!(kmedoids(&d, 1, &p, 0).is_err());
    }
}
