//! Clustering accuracy and result records.

use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub landmarks: f64,
    pub coding: f64,
    pub embedding: f64,
    pub kmeans: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.landmarks + self.coding + self.embedding + self.kmeans
    }
}

/// Numerical events worth surfacing alongside the labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    pub zero_norm_columns: usize,
    pub skipped_atoms: usize,
    pub unconverged_columns: usize,
    pub max_kkt: f64,
    pub clamped_degrees: usize,
    pub rank_deficient: usize,
    pub zero_embedding_rows: usize,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    /// Present only when ground truth was available.
    pub accuracy: Option<f64>,
    pub timings: StageTimings,
    /// Echo of the configuration that produced this result.
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

fn check_labels(predicted: &[usize], truth: &[usize], k: usize) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(FscError::DimensionMismatch(format!(
            "{} predicted labels vs {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    if let Some(&l) = predicted.iter().chain(truth).find(|&&l| l >= k) {
        return Err(FscError::LabelOutOfRange { label: l, k });
    }
    Ok(())
}

/// `K x K` counts; entry `[a][b]` is the number of points predicted `a` with truth `b`.
pub fn contingency(predicted: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(predicted, truth, k)?;
    let mut table = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        table[p][t] += 1;
    }
    Ok(table)
}

/// Fraction of points correctly labeled under the best matching of
/// predicted to true cluster ids.
pub fn clustering_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    let table = contingency(predicted, truth, k)?;
    if predicted.is_empty() {
        return Err(FscError::Empty);
    }
    let matched = max_weight_matching(&table);
    let correct: usize = matched.iter().enumerate().map(|(a, &b)| table[a][b]).sum();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Maximum-weight perfect matching on a square count matrix (Hungarian
/// algorithm with potentials, O(K³)). Returns the column matched to each row.
pub fn max_weight_matching(weights: &[Vec<usize>]) -> Vec<usize> {
    let k = weights.len();
    if k == 0 {
        return Vec::new();
    }
    // Minimize negated weights. Rows and columns are 1-based inside; 0 is a sentinel.
    let cost = |i: usize, j: usize| -(weights[i - 1][j - 1] as i64);
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut row_of = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; k];
    for j in 1..=k {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}
