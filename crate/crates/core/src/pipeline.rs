//! The end-to-end landmark clustering pipeline: select landmarks, code every
//! point against them, embed, and run K-means on the embedding rows.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_columns, Dataset};
use crate::error::{FscError, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::landmarks::{select_kmedoids, select_uniform, KMedoidsParams, LandmarkMethod, LandmarkSet};
use crate::lasso::{solve_all, Coding, SolverParams};
use crate::metrics::{clustering_accuracy, ClusteringResult, Diagnostics, StageTimings};
use crate::spectral::{embed, normalize_rows, SpectralEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscConfig {
    /// Number of clusters `K`.
    pub k: usize,
    /// Number of landmarks `m`.
    pub m: usize,
    pub sampling: LandmarkMethod,
    pub kmedoids: KMedoidsParams,
    pub solver: SolverParams,
    pub kmeans: KMeansParams,
    pub normalize_columns: bool,
    pub normalize_rows: bool,
    pub seed: u64,
}

impl FscConfig {
    pub fn new(k: usize, m: usize, sampling: LandmarkMethod, seed: u64) -> Self {
        FscConfig {
            k,
            m,
            sampling,
            kmedoids: KMedoidsParams::default(),
            solver: SolverParams::default(),
            kmeans: KMeansParams::default(),
            normalize_columns: true,
            normalize_rows: true,
            seed,
        }
    }
}

/// Derives an independent seed for a named stage from the master seed, so
/// that changing one stage's settings never perturbs another's randomness.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, folded into the master seed with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (master ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Accuracy against the dataset's ground truth, if it has any.
pub(crate) fn score(data: &Dataset, labels: &[usize], k: usize) -> Result<Option<f64>> {
    match (data.labels(), data.num_classes()) {
        (Some(truth), Some(classes)) => clustering_accuracy(labels, truth, k.max(classes)).map(Some),
        _ => Ok(None),
    }
}

/// Every intermediate product of one pipeline run.
#[derive(Debug, Clone)]
pub struct FscRun {
    pub result: ClusteringResult,
    pub landmarks: LandmarkSet,
    pub coding: Coding,
    pub embedding: SpectralEmbedding,
}

pub fn fsc(data: &Dataset, config: &FscConfig) -> Result<ClusteringResult> {
    fsc_detailed(data, config).map(|run| run.result)
}

pub fn fsc_detailed(data: &Dataset, config: &FscConfig) -> Result<FscRun> {
    let n = data.len();
    if config.k == 0 {
        return Err(FscError::InvalidConfig("K must be positive".into()));
    }
    if config.m < config.k {
        return Err(FscError::InvalidConfig(format!(
            "need at least K = {} landmarks, got {}",
            config.k, config.m
        )));
    }
    if config.m > n {
        return Err(FscError::TooMany {
            requested: config.m,
            available: n,
        });
    }

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
    let landmark_seed = stage_seed(config.seed, "landmarks");
    let landmarks = match config.sampling {
        LandmarkMethod::Uniform => select_uniform(data, config.m, landmark_seed)?,
        LandmarkMethod::KMedoids => select_kmedoids(data, config.m, &config.kmedoids, landmark_seed)?,
    };
    let t_landmarks = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let coding = solve_all(data, &landmarks, &config.solver)?;
    let t_coding = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let embedding = embed(&coding.coefficients, config.k)?;
    let (rows, zero_rows) = if config.normalize_rows {
        normalize_rows(&embedding.rows)
    } else {
        (embedding.rows.clone(), 0)
    };
    let t_embedding = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let clusters = kmeans(&rows, config.k, &config.kmeans, stage_seed(config.seed, "kmeans"))?;
    let t_kmeans = t.elapsed().as_secs_f64();
    let total = start.elapsed().as_secs_f64();

    diagnostics.skipped_atoms = coding.stats.skipped_atoms;
    diagnostics.unconverged_columns = coding.stats.unconverged;
    diagnostics.max_kkt = coding.stats.max_kkt;
    diagnostics.clamped_degrees = embedding.clamped_count;
    diagnostics.rank_deficient = embedding.rank_deficient;
    diagnostics.zero_embedding_rows = zero_rows;
    diagnostics.singular_values = embedding.singular_values.clone();

    let accuracy = score(data, &clusters.labels, config.k)?;
    let result = ClusteringResult {
        labels: clusters.labels,
        accuracy,
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
    };
    Ok(FscRun {
        result,
        landmarks,
        coding,
        embedding,
    })
}
