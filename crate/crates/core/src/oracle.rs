//! Dense full-dataset sparse subspace clustering, for validation at small n.
//!
//! Every point is coded against all other points, an explicit `n x n`
//! affinity is formed and the leading eigenvectors of the normalized
//! affinity are found by a dense symmetric eigendecomposition.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_columns, Dataset};
use crate::error::{FscError, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::landmarks::{LandmarkMethod, LandmarkSet};
use crate::lasso::{solve_all, CoefficientMatrix, SolverParams};
use crate::metrics::{ClusteringResult, Diagnostics, StageTimings};
use crate::pipeline::{score, stage_seed};
use crate::spectral::{normalize_rows, EPS_DEG};

pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// How the affinity is built from the coefficient matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affinity {
    /// `W = |C| + |C|ᵀ`.
    #[default]
    Symmetric,
    /// `W = |C|ᵀ|C|`, the graph the landmark pipeline embeds implicitly.
    Gram,
}

impl std::str::FromStr for Affinity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(Affinity::Symmetric),
            "gram" => Ok(Affinity::Gram),
            _ => Err(format!("unknown affinity {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub k: usize,
    pub solver: SolverParams,
    pub kmeans: KMeansParams,
    pub affinity: Affinity,
    pub normalize_columns: bool,
    pub normalize_rows: bool,
    pub oracle_cap: usize,
    pub seed: u64,
}

impl OracleConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        OracleConfig {
            k,
            solver: SolverParams::default(),
            kmeans: KMeansParams::default(),
            affinity: Affinity::default(),
            normalize_columns: true,
            normalize_rows: true,
            oracle_cap: DEFAULT_ORACLE_CAP,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseEmbedding {
    /// `n x K` leading eigenvectors.
    pub vectors: DMatrix<f64>,
    /// All `n` eigenvalues of `D^{-1/2} W D^{-1/2}`, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub degrees: Vec<f64>,
    pub clamped: usize,
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(FscError::OracleCap { n, cap });
    }
    Ok(())
}

/// Top-`k` eigenvectors of the normalized affinity `D^{-1/2} W D^{-1/2}`.
pub fn dense_spectral(w: &DMatrix<f64>, k: usize) -> Result<DenseEmbedding> {
    let n = w.nrows();
    if k == 0 || k > n {
        return Err(FscError::InvalidConfig(format!("cannot take {k} eigenvectors of a {n}-node graph")));
    }
    let mut clamped = 0;
    let degrees: Vec<f64> = w
        .row_iter()
        .map(|r| {
            let d = r.sum();
            if d < EPS_DEG {
                clamped += 1;
                EPS_DEG
            } else {
                d
            }
        })
        .collect();
    let scale: Vec<f64> = degrees.iter().map(|d| d.sqrt().recip()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| scale[i] * w[(i, j)] * scale[j]);
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let vectors = eig.eigenvectors.select_columns(order[..k].iter());
    Ok(DenseEmbedding {
        vectors,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        degrees,
        clamped,
    })
}

/// Explicitly forms `W = |C|ᵀ|C|` and returns its dense spectral embedding.
pub fn dense_embedding_oracle(c: &CoefficientMatrix, k: usize, cap: usize) -> Result<DenseEmbedding> {
    check_cap(c.ncols(), cap)?;
    let abs = c.abs().to_dense();
    dense_spectral(&abs.tr_mul(&abs), k)
}

/// Full sparse subspace clustering with every other point as dictionary.
pub fn full_ssc(data: &Dataset, config: &OracleConfig) -> Result<ClusteringResult> {
    let n = data.len();
    check_cap(n, config.oracle_cap)?;
    let start = Instant::now();
    let mut diagnostics = Diagnostics::default();
    let normalized;
    let data = if config.normalize_columns {
        let (d, zero) = normalize_columns(data);
        diagnostics.zero_norm_columns = zero;
        normalized = d;
        &normalized
    } else {
        data
    };

    let t = Instant::now();
    let everyone = LandmarkSet::from_indices(data, (0..n).collect(), LandmarkMethod::Uniform)?;
    let t_landmarks = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let coding = solve_all(data, &everyone, &config.solver)?;
    let t_coding = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let abs = coding.coefficients.abs().to_dense();
    let w = match config.affinity {
        Affinity::Symmetric => &abs + abs.transpose(),
        Affinity::Gram => abs.tr_mul(&abs),
    };
    drop(abs);
    let emb = dense_spectral(&w, config.k)?;
    let (rows, zero_rows) = if config.normalize_rows {
        normalize_rows(&emb.vectors)
    } else {
        (emb.vectors.clone(), 0)
    };
    let t_embedding = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let clusters = kmeans(&rows, config.k, &config.kmeans, stage_seed(config.seed, "kmeans"))?;
    let t_kmeans = t.elapsed().as_secs_f64();
    let total = start.elapsed().as_secs_f64();

    diagnostics.skipped_atoms = coding.stats.skipped_atoms;
    diagnostics.unconverged_columns = coding.stats.unconverged;
    diagnostics.max_kkt = coding.stats.max_kkt;
    diagnostics.clamped_degrees = emb.clamped;
    diagnostics.zero_embedding_rows = zero_rows;
    diagnostics.singular_values = emb.eigenvalues[..config.k].iter().map(|v| v.max(0.0).sqrt()).collect();

    Ok(ClusteringResult {
        accuracy: score(data, &clusters.labels, config.k)?,
        labels: clusters.labels,
        timings: StageTimings {
            landmarks: t_landmarks,
            coding: t_coding,
            embedding: t_embedding,
            kmeans: t_kmeans,
            total,
        },
        config: serde_json::to_value(config)?,
        seed: config.seed,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_noiseless_lines() {
        // Two orthogonal lines in R^3, 20 points each.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (k, dir) in [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]].iter().enumerate() {
            for _ in 0..20 {
                let t: f64 = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                samples.push(dir.iter().map(|v| v * t).collect());
                labels.push(k);
            }
        }
        let data = Dataset::from_samples(&samples, Some(labels)).unwrap();
        let res = full_ssc(&data, &OracleConfig::new(2, 0)).unwrap();
        assert_eq!(res.accuracy, Some(1.0));
    }

    #[test]
    fn orthogonal_outlier_is_clamped() {
        // Two coordinate planes in R^6 plus one point along e5.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for k in 0..2 {
            for _ in 0..15 {
                let mut x = vec![0.0; 6];
                x[2 * k] = rng.random_range(-1.0..1.0);
                x[2 * k + 1] = rng.random_range(-1.0..1.0);
                samples.push(x);
                labels.push(k);
            }
        }
        samples.push(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        labels.push(0);
        let data = Dataset::from_samples(&samples, Some(labels)).unwrap();
        let res = full_ssc(&data, &OracleConfig::new(2, 0)).unwrap();
        assert!(res.diagnostics.clamped_degrees >= 1);
        assert_eq!(res.labels.len(), 31);
    }

    #[test]
    fn rank_one_and_diagonal_oracles() {
        let u = nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let v = nalgebra::DVector::from_vec(vec![0.3, 1.0, 0.7, 2.0]);
        let c = CoefficientMatrix::from_dense(&(&u * v.transpose()));
        let emb = dense_embedding_oracle(&c, 1, DEFAULT_ORACLE_CAP).unwrap();
        assert!((emb.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!(emb.eigenvalues[1..].iter().all(|e| e.abs() < 1e-10));

        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let emb = dense_embedding_oracle(&CoefficientMatrix::from_dense(&diag), 3, DEFAULT_ORACLE_CAP).unwrap();
        for col in emb.vectors.column_iter() {
            let mut mags: Vec<f64> = col.iter().map(|v| v.abs()).collect();
            mags.sort_by(f64::total_cmp);
            assert!(mags[0] < 1e-12 && mags[1] < 1e-12 && (mags[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let data = generate(&SynthConfig::uniform(4, 2, 1, 6, 0.0, 0)).unwrap();
        let mut cfg = OracleConfig::new(2, 0);
        cfg.oracle_cap = 10;
        assert!(matches!(full_ssc(&data, &cfg), Err(FscError::OracleCap { n: 12, cap: 10 })));
    }

    #[test]
    fn all_points_coding_matches_column_by_column_solves() {
        let data = generate(&SynthConfig::uniform(8, 3, 2, 12, 0.05, 4)).unwrap();
        let (data, _) = normalize_columns(&data);
        let n = data.len();
        let params = SolverParams::default();
        let everyone = LandmarkSet::from_indices(&data, (0..n).collect(), LandmarkMethod::Uniform).unwrap();
        let batch = solve_all(&data, &everyone, &params).unwrap().coefficients;

        let dict = crate::lasso::Dictionary::new(data.points().clone());
        for j in 0..n {
            let x = data.column(j);
            let problem = crate::lasso::CodingProblem {
                dictionary: &dict,
                lambda: crate::lasso::column_lambda(&dict, x, Some(j), params.lambda),
                excluded_atom: Some(j),
                tol: params.tol,
                max_sweeps: params.max_sweeps,
                kkt_tol: params.kkt_tol,
            };
            let single = crate::lasso::solve_column(&problem, x).unwrap();
            assert_eq!(single.coef[j], 0.0);
            for (i, &v) in single.coef.iter().enumerate() {
                assert!((v - batch.get(i, j)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn normalized_gram_affinity_spectrum_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = rng.random_range(2..10);
            let n = rng.random_range(2..60);
            let dense = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.01..1.0));
            let emb = dense_embedding_oracle(&CoefficientMatrix::from_dense(&dense), 1, DEFAULT_ORACLE_CAP).unwrap();
            assert_eq!(emb.clamped, 0);
            assert!(emb.eigenvalues[0] <= 1.0 + 1e-6);
            assert!(emb.eigenvalues.iter().all(|&e| e >= -1e-10));
        }
    }

    #[test]
    fn gram_affinity_agrees_with_landmark_pipeline_at_full_size() {
        let data = generate(&SynthConfig::uniform(10, 3, 3, 40, 0.05, 6)).unwrap();
        let n = data.len();
        let mut cfg = OracleConfig::new(3, 2);
        cfg.affinity = Affinity::Gram;
        let dense = full_ssc(&data, &cfg).unwrap();
        let fast = crate::pipeline::fsc(&data, &crate::pipeline::FscConfig::new(3, n, LandmarkMethod::Uniform, 2)).unwrap();
        let agreement = crate::metrics::clustering_accuracy(&dense.labels, &fast.labels, 3).unwrap();
        assert!(agreement >= 0.98, "agreement {agreement}");
    }
}
