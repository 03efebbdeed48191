//! Linear-time spectral embedding of a landmark coefficient matrix.
//!
//! With `C̃ = |C|` (`m x n`) the affinity `W = C̃ᵀC̃` is never formed. Degrees
//! come from `d_j = c̃_jᵀ α` with `α = Σ_j c̃_j`, and the leading eigenvectors
//! of `D^{-1/2} W D^{-1/2}` are the leading right singular vectors of
//! `M = C̃ D^{-1/2}`, recovered from the `m x m` matrix `M Mᵀ`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{FscError, Result};
use crate::lasso::CoefficientMatrix;

/// Degrees below this are clamped.
pub const EPS_DEG: f64 = 1e-12;
/// Singular values at or below this mark a rank-deficient embedding.
pub const EPS_SV: f64 = 1e-10;

const BLOCK_COLS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct Degrees {
    pub values: Vec<f64>,
    pub clamped: usize,
}

/// Degree of every point in the graph `W = |C|ᵀ|C|`, clamped below at [`EPS_DEG`].
pub fn degrees(c: &CoefficientMatrix) -> Degrees {
    let mut alpha = vec![0.0; c.nrows()];
    for j in 0..c.ncols() {
        let (rows, vals) = c.column(j);
        for (&i, v) in rows.iter().zip(vals) {
            alpha[i] += v.abs();
        }
    }
    let mut clamped = 0;
    let values = (0..c.ncols())
        .map(|j| {
            let (rows, vals) = c.column(j);
            let d: f64 = rows.iter().zip(vals).map(|(&i, v)| v.abs() * alpha[i]).sum();
            if d < EPS_DEG {
                clamped += 1;
                EPS_DEG
            } else {
                d
            }
        })
        .collect();
    if clamped > 0 {
        warn!("{clamped} degree(s) clamped to {EPS_DEG:e}");
    }
    Degrees { values, clamped }
}

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// `n x K`, orthonormal columns (zero columns where rank deficient).
    pub rows: DMatrix<f64>,
    /// Top `K` singular values of `M`, non-increasing.
    pub singular_values: Vec<f64>,
    /// All `m` singular values of `M`, non-increasing.
    pub spectrum: Vec<f64>,
    /// `m x K` left singular vectors matching `rows`.
    pub left: DMatrix<f64>,
    pub degrees: Vec<f64>,
    pub clamped_count: usize,
    pub rank_deficient: usize,
}

/// Top-`k` right singular vectors of `|C| D^{-1/2}`.
pub fn embed(c: &CoefficientMatrix, k: usize) -> Result<SpectralEmbedding> {
    let (m, n) = (c.nrows(), c.ncols());
    if k == 0 || k > m || k > n {
        return Err(FscError::InvalidConfig(format!(
            "embedding dimension {k} must lie in 1..={} for a {m} x {n} coefficient matrix",
            m.min(n)
        )));
    }
    let deg = degrees(c);
    let scale: Vec<f64> = deg.values.iter().map(|d| d.sqrt().recip()).collect();

    let gram = scaled_gram(c, &scale);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();

    let mut rows = DMatrix::zeros(n, k);
    let mut left = DMatrix::zeros(m, k);
    let mut rank_deficient = 0;
    for (slot, &e) in order.iter().take(k).enumerate() {
        let sigma = spectrum[slot];
        let u = eig.eigenvectors.column(e);
        left.column_mut(slot).copy_from(&u);
        if sigma <= EPS_SV {
            rank_deficient += 1;
            continue;
        }
        let mut p = rows.column_mut(slot);
        for j in 0..n {
            let (ri, vals) = c.column(j);
            let dot: f64 = ri.iter().zip(vals).map(|(&i, v)| v.abs() * u[i]).sum();
            p[j] = dot * scale[j] / sigma;
        }
    }
    if rank_deficient > 0 {
        warn!("embedding is rank deficient: {rank_deficient} of {k} singular values <= {EPS_SV:e}");
    }

    Ok(SpectralEmbedding {
        rows,
        singular_values: spectrum[..k].to_vec(),
        spectrum,
        left,
        degrees: deg.values,
        clamped_count: deg.clamped,
        rank_deficient,
    })
}

/// `M Mᵀ` accumulated over fixed column blocks, summed in block order so the
/// result does not depend on the number of workers.
fn scaled_gram(c: &CoefficientMatrix, scale: &[f64]) -> DMatrix<f64> {
    let m = c.nrows();
    let n = c.ncols();
    let starts: Vec<usize> = (0..n).step_by(BLOCK_COLS).collect();
    let partials: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&start| {
            let mut g = DMatrix::zeros(m, m);
            for j in start..(start + BLOCK_COLS).min(n) {
                let (rows, vals) = c.column(j);
                let s2 = scale[j] * scale[j];
                for (a, (&ia, va)) in rows.iter().zip(vals).enumerate() {
                    let wa = va.abs() * s2;
                    for (&ib, vb) in rows[..=a].iter().zip(vals) {
                        g[(ia, ib)] += wa * vb.abs();
                    }
                }
            }
            g
        })
        .collect();
    let mut gram = DMatrix::zeros(m, m);
    for g in &partials {
        gram += g;
    }
    // Only one triangle was accumulated per pair; mirror it.
    for i in 0..m {
        for j in 0..i {
            let v = gram[(i, j)] + gram[(j, i)];
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram
}

/// Scales every embedding row to unit length. Rows with norm at or below
/// [`EPS_DEG`] become zero rows; their count is returned.
pub fn normalize_rows(rows: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut out = rows.clone();
    let mut zero = 0;
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > EPS_DEG {
            row /= norm;
        } else {
            row.fill(0.0);
            zero += 1;
        }
    }
    (out, zero)
}

/// Writes `index,degree,p0..p{K-1}` rows for inspection.
pub fn write_embedding_csv(embedding: &SpectralEmbedding, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| FscError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let k = embedding.rows.ncols();
    let header: Vec<String> = ["index".to_string(), "degree".to_string()]
        .into_iter()
        .chain((0..k).map(|i| format!("p{i}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (j, row) in embedding.rows.row_iter().enumerate() {
        write!(out, "{j},{:e}", embedding.degrees[j]).map_err(io)?;
        for v in row.iter() {
            write!(out, ",{v:e}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| {
            if rng.random_bool(density) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn degree_of_single_column() {
        let c = CoefficientMatrix::from_dense(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(degrees(&c).values, vec![2.0]);
    }

    #[test]
    fn degrees_match_dense_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dense = random_sparse(&mut rng, 4, 6, 1.0);
        let ct = dense.abs();
        let w = ct.tr_mul(&ct);
        let d = degrees(&CoefficientMatrix::from_dense(&dense));
        for (j, v) in d.values.iter().enumerate() {
            let row_sum: f64 = w.row(j).sum();
            assert!((v - row_sum).abs() <= 1e-12 * row_sum);
        }
    }

    #[test]
    fn zero_column_is_clamped() {
        let dense = DMatrix::from_column_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 0.2, 1.0]);
        let d = degrees(&CoefficientMatrix::from_dense(&dense));
        assert_eq!(d.values[1], EPS_DEG);
        assert_eq!(d.clamped, 1);
    }

    #[test]
    fn two_block_graph_separates() {
        let mut dense = DMatrix::zeros(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for j in 0..3 {
            dense[(0, j)] = rng.random_range(0.1..1.0);
            dense[(1, j)] = rng.random_range(0.1..1.0);
            dense[(2, j + 3)] = rng.random_range(0.1..1.0);
            dense[(3, j + 3)] = rng.random_range(0.1..1.0);
        }
        let emb = embed(&CoefficientMatrix::from_dense(&dense), 2).unwrap();
        assert!((emb.singular_values[0] - 1.0).abs() < 1e-10);
        assert!((emb.singular_values[1] - 1.0).abs() < 1e-10);
        let (rows, zero) = normalize_rows(&emb.rows);
        assert_eq!(zero, 0);
        for block in [0..3, 3..6] {
            let first = rows.row(block.start).into_owned();
            for j in block {
                assert!((rows.row(j) - &first).norm() < 1e-10);
            }
        }
        assert!((rows.row(0) - rows.row(3)).norm() > 1.0);
    }

    #[test]
    fn triplets_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dense = random_sparse(&mut rng, 8, 60, 0.4);
        let c = CoefficientMatrix::from_dense(&dense);
        let emb = embed(&c, 3).unwrap();
        let gram = emb.rows.tr_mul(&emb.rows);
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-8);
        assert!(emb.singular_values.windows(2).all(|w| w[0] >= w[1]));

        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            60,
            emb.degrees.iter().map(|d| d.sqrt().recip()),
        ));
        let m = dense.abs() * scale;
        let s1 = emb.singular_values[0];
        for k in 0..3 {
            let r = &m * emb.rows.column(k) - emb.left.column(k) * emb.singular_values[k];
            assert!(r.norm() <= 1e-8 * s1);
        }
    }

    #[test]
    fn full_rank_case_spans_row_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dense = random_sparse(&mut rng, 3, 20, 0.8);
        let c = CoefficientMatrix::from_dense(&dense);
        let emb = embed(&c, 3).unwrap();
        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            20,
            emb.degrees.iter().map(|d| d.sqrt().recip()),
        ));
        let scaled = dense.abs() * scale;
        // Every row of the scaled matrix lies in span(P), since it has rank 3.
        let p = &emb.rows;
        for i in 0..3 {
            let r = scaled.row(i).transpose();
            let resid = &r - p * (p.transpose() * &r);
            assert!(resid.norm() < 1e-10 * r.norm());
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let dense = DMatrix::from_column_slice(3, 4, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let emb = embed(&CoefficientMatrix::from_dense(&dense), 2).unwrap();
        assert_eq!(emb.rank_deficient, 1);
        assert!(emb.rows.column(1).iter().all(|&v| v == 0.0));
        assert!(embed(&CoefficientMatrix::from_dense(&dense), 4).is_err());
    }

    #[test]
    fn row_normalization() {
        let rows = DMatrix::from_row_slice(3, 2, &[3.0, 4.0, 0.0, 0.0, 0.6, 0.8]);
        let (out, zero) = normalize_rows(&rows);
        assert_eq!(zero, 1);
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15 && (out[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(out.row(1).norm(), 0.0);
        let (again, _) = normalize_rows(&out);
        assert!((again - &out).abs().max() <= 1e-14);
    }

    #[test]
    fn gram_is_independent_of_worker_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let dense = random_sparse(&mut rng, 10, 5000, 0.3);
        let c = CoefficientMatrix::from_dense(&dense);
        let a = embed(&c, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| embed(&c, 3).unwrap());
        assert_eq!(a.rows, b.rows);
    }
}
