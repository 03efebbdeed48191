//! ℓ1-regularized coding of points against a dictionary of landmarks.
//!
//! Each point `x` is coded by minimizing `‖c‖₁ + (λ/2)‖x − Bc‖²` with cyclic
//! coordinate descent over the shared Gram matrix `G = BᵀB`. When the point is
//! itself one of the atoms, that coefficient is pinned to zero. Once the
//! support settles, an exact feature-sign search finishes the solve; a column
//! only counts as converged when its optimality residual is below tolerance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EPS_NORM};
use crate::error::{FscError, Result};
use crate::landmarks::LandmarkSet;

/// Atoms of a coding dictionary together with their Gram matrix.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>) -> Self {
        let gram = atoms.tr_mul(&atoms);
        Dictionary { atoms, gram }
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// `Bᵀx`.
    pub fn correlations(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        self.atoms
            .as_slice()
            .chunks_exact(d)
            .map(|a| a.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    fn gram_column(&self, i: usize) -> &[f64] {
        let m = self.len();
        &self.gram.as_slice()[i * m..(i + 1) * m]
    }
}

/// One coding problem: a dictionary, a weight λ and an optional pinned atom.
#[derive(Debug, Clone, Copy)]
pub struct CodingProblem<'a> {
    pub dictionary: &'a Dictionary,
    pub lambda: f64,
    pub excluded_atom: Option<usize>,
    /// Stop once no coordinate moves more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Optimality certificate required before stopping early.
    pub kkt_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSolution {
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Atoms ignored because their squared norm is numerically zero.
    pub skipped_atoms: usize,
    pub kkt: f64,
}

#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// `‖c‖₁ + (λ/2)‖x − Bc‖²`.
pub fn objective(problem: &CodingProblem<'_>, x: &[f64], c: &[f64]) -> f64 {
    let b = problem.dictionary.atoms();
    let mut r = nalgebra::DVector::from_column_slice(x);
    for (i, &ci) in c.iter().enumerate() {
        if ci != 0.0 {
            r.axpy(-ci, &b.column(i), 1.0);
        }
    }
    c.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * problem.lambda * r.norm_squared()
}

pub fn solve_column(problem: &CodingProblem<'_>, x: &[f64]) -> Result<ColumnSolution> {
    solve_column_impl(problem, x, None)
}

/// Like [`solve_column`], also returning the objective after every sweep.
pub fn solve_column_traced(problem: &CodingProblem<'_>, x: &[f64]) -> Result<(ColumnSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = solve_column_impl(problem, x, Some(&mut trace))?;
    Ok((sol, trace))
}

fn check_problem(problem: &CodingProblem<'_>, x: &[f64]) -> Result<()> {
    let dict = problem.dictionary;
    if x.len() != dict.dim() {
        return Err(FscError::DimensionMismatch(format!(
            "point has {} coordinates, dictionary has {}",
            x.len(),
            dict.dim()
        )));
    }
    if let Some(e) = problem.excluded_atom {
        if e >= dict.len() {
            return Err(FscError::IndexOutOfRange {
                index: e,
                len: dict.len(),
            });
        }
    }
    if !(problem.lambda > 0.0 && problem.lambda.is_finite()) {
        return Err(FscError::InvalidConfig(format!("lambda must be positive, got {}", problem.lambda)));
    }
    Ok(())
}

fn solve_column_impl(problem: &CodingProblem<'_>, x: &[f64], mut trace: Option<&mut Vec<f64>>) -> Result<ColumnSolution> {
    check_problem(problem, x)?;
    let dict = problem.dictionary;
    let m = dict.len();
    let lambda = problem.lambda;
    let tau = 1.0 / lambda;
    let corr = dict.correlations(x);
    let gram = dict.gram();

    let active: Vec<bool> = (0..m)
        .map(|i| Some(i) != problem.excluded_atom && gram[(i, i)] > EPS_NORM * EPS_NORM)
        .collect();
    let skipped_atoms = (0..m)
        .filter(|&i| Some(i) != problem.excluded_atom && !active[i])
        .count();

    let mut c = vec![0.0; m];
    // q = G c, updated incrementally and refreshed before each certificate check.
    let mut q = vec![0.0; m];
    let mut sweeps = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut polished_pattern: Vec<i8> = Vec::new();

    while sweeps < problem.max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        let mut support_changed = false;
        for i in 0..m {
            if !active[i] {
                continue;
            }
            let gii = gram[(i, i)];
            let rho = corr[i] - (q[i] - gii * c[i]);
            let next = soft_threshold(rho, tau) / gii;
            let delta = next - c[i];
            if delta != 0.0 {
                support_changed |= (next == 0.0) != (c[i] == 0.0);
                for (qv, g) in q.iter_mut().zip(dict.gram_column(i)) {
                    *qv += g * delta;
                }
                c[i] = next;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(problem, x, &c));
        }
        if max_delta <= problem.tol {
            refresh(&mut q, &c, dict);
            kkt = kkt_from(&corr, &q, &c, lambda, &active);
            if kkt <= problem.kkt_tol {
                converged = true;
                break;
            }
        }
        // Once a sweep leaves the support alone, finish with a feature-sign
        // search from here. Sweeps resume if it cannot certify the result.
        let pattern: Vec<i8> = c.iter().map(|v| if *v == 0.0 { 0 } else { v.signum() as i8 }).collect();
        if sweeps > 1 && !support_changed && pattern != polished_pattern {
            polished_pattern = pattern;
            if let Some(polished) = feature_sign_polish(dict, &corr, &c, tau, &active) {
                if objective(problem, x, &polished) <= objective(problem, x, &c) {
                    c = polished;
                    refresh(&mut q, &c, dict);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(objective(problem, x, &c));
                    }
                    kkt = kkt_from(&corr, &q, &c, lambda, &active);
                    if kkt <= problem.kkt_tol {
                        converged = true;
                        break;
                    }
                }
            }
        }
    }
    if !converged {
        refresh(&mut q, &c, dict);
        kkt = kkt_from(&corr, &q, &c, lambda, &active);
    }

    Ok(ColumnSolution {
        coef: c,
        lambda,
        sweeps,
        converged,
        skipped_atoms,
        kkt,
    })
}

/// Feature-sign search warm-started at `c`, on the scaled objective
/// `τ‖c‖₁ + ½cᵀGc − bᵀc`. Each round either moves toward the minimizer over
/// the current sign pattern (stopping at the best sign crossing), reduces a
/// linearly dependent support along a null direction, or admits the inactive
/// atom that most violates optimality. Every accepted step lowers the
/// objective. Returns `None` if no progress is possible.
fn feature_sign_polish(dict: &Dictionary, corr: &[f64], c: &[f64], tau: f64, active: &[bool]) -> Option<Vec<f64>> {
    let gram = dict.gram();
    let m = c.len();
    let smooth = |v: &[f64]| {
        let nz: Vec<usize> = (0..m).filter(|&i| v[i] != 0.0).collect();
        let mut f = 0.0;
        for &i in &nz {
            let gi: f64 = nz.iter().map(|&j| gram[(i, j)] * v[j]).sum();
            f += 0.5 * v[i] * gi - corr[i] * v[i] + tau * v[i].abs();
        }
        f
    };
    let mut cur = c.to_vec();
    let mut signs: Vec<f64> = cur.iter().map(|&v| if v == 0.0 { 0.0 } else { v.signum() }).collect();

    for _ in 0..20 * m.max(1) {
        let support: Vec<usize> = (0..m).filter(|&i| signs[i] != 0.0).collect();
        let nonzero: Vec<usize> = support.iter().copied().filter(|&i| cur[i] != 0.0).collect();
        // h = b − G c, the scaled negative gradient of the smooth part.
        let mut h = corr.to_vec();
        for &j in &nonzero {
            for (hv, g) in h.iter_mut().zip(dict.gram_column(j)) {
                *hv -= g * cur[j];
            }
        }

        let at_face_optimum = nonzero.len() == support.len()
            && support.iter().all(|&i| (h[i] - tau * signs[i]).abs() <= 1e-12 * tau.max(1.0));
        if at_face_optimum {
            let entering = (0..m)
                .filter(|&i| active[i] && signs[i] == 0.0 && h[i].abs() > tau * (1.0 + 1e-12))
                .max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs()));
            match entering {
                Some(i) => {
                    signs[i] = h[i].signum();
                    continue;
                }
                None => return Some(cur),
            }
        }

        let k = support.len();
        let before = smooth(&cur);
        let mut next = cur.clone();
        match factor_support(gram, &support) {
            Ok(factor) => {
                let rhs: Vec<f64> = support.iter().map(|&i| corr[i] - tau * signs[i]).collect();
                let z = factor.solve(rhs);
                // Candidates: the target itself and every sign crossing on the way.
                let mut steps = vec![1.0];
                for (a, &i) in support.iter().enumerate() {
                    if cur[i] != 0.0 && z[a] * signs[i] < 0.0 {
                        steps.push(cur[i] / (cur[i] - z[a]));
                    }
                }
                let at = |t: f64| {
                    let mut v = cur.clone();
                    for (a, &i) in support.iter().enumerate() {
                        v[i] += t * (z[a] - cur[i]);
                    }
                    v
                };
                let (t, _) = steps
                    .iter()
                    .map(|&t| (t, smooth(&at(t))))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))?;
                next = at(t);
                for (a, &i) in support.iter().enumerate() {
                    if cur[i] != 0.0 && z[a] * signs[i] < 0.0 && (cur[i] / (cur[i] - z[a]) - t).abs() <= f64::EPSILON {
                        next[i] = 0.0;
                    }
                }
            }
            Err(v) => {
                debug_assert_eq!(v.len(), k);
                let slope = |dir: f64| -> f64 {
                    support
                        .iter()
                        .enumerate()
                        .map(|(a, &i)| if cur[i] != 0.0 { signs[i] * dir * v[a] } else { v[a].abs() })
                        .sum()
                };
                let dir = if slope(1.0) <= slope(-1.0) { 1.0 } else { -1.0 };
                if slope(dir) >= 0.0 {
                    return None;
                }
                let (mut t, mut hit) = (f64::INFINITY, None);
                for (a, &i) in support.iter().enumerate() {
                    let d = dir * v[a];
                    if cur[i] != 0.0 && d * cur[i] < 0.0 && -cur[i] / d < t {
                        t = -cur[i] / d;
                        hit = Some(i);
                    }
                }
                let hit = hit?;
                for (a, &i) in support.iter().enumerate() {
                    next[i] += t * dir * v[a];
                }
                next[hit] = 0.0;
            }
        }
        if smooth(&next) > before + 1e-12 * before.abs().max(1.0) {
            return None;
        }
        cur = next;
        signs = cur.iter().map(|&v| if v == 0.0 { 0.0 } else { v.signum() }).collect();
    }
    Some(cur)
}

/// Row-major lower-triangular Cholesky factor of a support Gram block.
struct SupportFactor {
    k: usize,
    l: Vec<f64>,
}

impl SupportFactor {
    fn solve(&self, mut b: Vec<f64>) -> Vec<f64> {
        let (k, l) = (self.k, &self.l);
        for r in 0..k {
            let s: f64 = (0..r).map(|c| l[r * k + c] * b[c]).sum();
            b[r] = (b[r] - s) / l[r * k + r];
        }
        for r in (0..k).rev() {
            let s: f64 = (r + 1..k).map(|c| l[c * k + r] * b[c]).sum();
            b[r] = (b[r] - s) / l[r * k + r];
        }
        b
    }
}

/// Cholesky of `G_SS`, one atom at a time. If an atom is numerically a
/// combination of the atoms before it, returns a null vector of `G_SS`
/// instead (supported on that atom and its predecessors).
fn factor_support(gram: &DMatrix<f64>, support: &[usize]) -> std::result::Result<SupportFactor, Vec<f64>> {
    let k = support.len();
    let scale = support.iter().map(|&i| gram[(i, i)]).fold(0.0, f64::max);
    let mut l = vec![0.0; k * k];
    for a in 0..k {
        let sa = support[a];
        for r in 0..a {
            let s: f64 = (0..r).map(|c| l[r * k + c] * l[a * k + c]).sum();
            l[a * k + r] = (gram[(support[r], sa)] - s) / l[r * k + r];
        }
        let d2 = gram[(sa, sa)] - (0..a).map(|c| l[a * k + c] * l[a * k + c]).sum::<f64>();
        if d2 <= 1e-10 * scale {
            // B_a = B_prefix w with L Lᵀ w = G_prefix,a, so (w, -1) is a null vector.
            let mut w = vec![0.0; k];
            for r in (0..a).rev() {
                let s: f64 = (r + 1..a).map(|c| l[c * k + r] * w[c]).sum();
                w[r] = (l[a * k + r] - s) / l[r * k + r];
            }
            w[a] = -1.0;
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.iter_mut().for_each(|v| *v /= norm);
            return Err(w);
        }
        l[a * k + a] = d2.sqrt();
    }
    Ok(SupportFactor { k, l })
}

fn refresh(q: &mut [f64], c: &[f64], dict: &Dictionary) {
    q.iter_mut().for_each(|v| *v = 0.0);
    for (i, &ci) in c.iter().enumerate() {
        if ci != 0.0 {
            for (qv, g) in q.iter_mut().zip(dict.gram_column(i)) {
                *qv += g * ci;
            }
        }
    }
}

fn kkt_from(corr: &[f64], gc: &[f64], c: &[f64], lambda: f64, active: &[bool]) -> f64 {
    (0..c.len())
        .filter(|&i| active[i])
        .map(|i| {
            let g = lambda * (corr[i] - gc[i]);
            if c[i] != 0.0 {
                (g - c[i].signum()).abs()
            } else {
                (g.abs() - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the subgradient optimality conditions over the
/// non-excluded atoms, with `g = λ Bᵀ(x − Bc)`.
pub fn kkt_residual(problem: &CodingProblem<'_>, x: &[f64], c: &[f64]) -> f64 {
    let dict = problem.dictionary;
    let corr = dict.correlations(x);
    let mut gc = vec![0.0; c.len()];
    refresh(&mut gc, c, dict);
    let active: Vec<bool> = (0..c.len()).map(|i| Some(i) != problem.excluded_atom).collect();
    kkt_from(&corr, &gc, c, problem.lambda, &active)
}

/// How λ is chosen for each column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum LambdaMode {
    /// `λ_j = alpha / max_i |B_iᵀ x_j|`, so the all-zero code is optimal
    /// exactly when `alpha <= 1`.
    Adaptive(f64),
    Fixed(f64),
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Adaptive(20.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub lambda: LambdaMode,
    pub tol: f64,
    pub max_sweeps: usize,
    pub kkt_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            lambda: LambdaMode::default(),
            tol: 1e-7,
            max_sweeps: 500,
            kkt_tol: 1e-6,
        }
    }
}

/// An `m x n` coefficient matrix in compressed sparse column form.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    nrows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn from_columns<I>(nrows: usize, columns: I) -> Self
    where
        I: IntoIterator<Item = (Vec<usize>, Vec<f64>)>,
    {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for (rows, vals) in columns {
            debug_assert!(rows.iter().all(|&r| r < nrows));
            debug_assert!(rows.windows(2).all(|w| w[0] < w[1]), "row indices must ascend");
            row_idx.extend(rows);
            values.extend(vals);
            col_ptr.push(row_idx.len());
        }
        CoefficientMatrix {
            nrows,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(c: &DMatrix<f64>) -> Self {
        CoefficientMatrix::from_columns(c.nrows(), c.column_iter().map(|col| sparsify(col.as_slice())))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn nnz_per_column(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        rows.iter().position(|&r| r == i).map_or(0.0, |p| vals[p])
    }

    /// Entrywise absolute value.
    pub fn abs(&self) -> CoefficientMatrix {
        CoefficientMatrix {
            values: self.values.iter().map(|v| v.abs()).collect(),
            ..self.clone()
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols());
        for j in 0..self.ncols() {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

fn sparsify(dense: &[f64]) -> (Vec<usize>, Vec<f64>) {
    dense
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, &v)| (i, v))
        .unzip()
}

/// Per-column solver diagnostics aggregated over a coding run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodingStats {
    pub max_kkt: f64,
    pub unconverged: usize,
    pub skipped_atoms: usize,
    pub zero_columns: usize,
    pub total_sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct Coding {
    pub coefficients: CoefficientMatrix,
    pub lambdas: Vec<f64>,
    pub stats: CodingStats,
}

/// Codes every dataset point against the landmarks, excluding a point's own
/// atom when it is a landmark. Columns are solved independently in parallel;
/// the output does not depend on the schedule.
pub fn solve_all(data: &Dataset, landmarks: &LandmarkSet, params: &SolverParams) -> Result<Coding> {
    if landmarks.matrix().nrows() != data.dim() {
        return Err(FscError::DimensionMismatch(format!(
            "landmarks have dimension {}, data has {}",
            landmarks.matrix().nrows(),
            data.dim()
        )));
    }
    let dict = Dictionary::new(landmarks.matrix().clone());
    let m = dict.len();

    let solved: Vec<(Vec<usize>, Vec<f64>, ColumnSolution)> = (0..data.len())
        .into_par_iter()
        .map(|j| {
            let x = data.column(j);
            let excluded = landmarks.atom_of(j);
            let lambda = column_lambda(&dict, x, excluded, params.lambda);
            let problem = CodingProblem {
                dictionary: &dict,
                lambda,
                excluded_atom: excluded,
                tol: params.tol,
                max_sweeps: params.max_sweeps,
                kkt_tol: params.kkt_tol,
            };
            let mut sol = solve_column(&problem, x)?;
            let (rows, vals) = sparsify(&sol.coef);
            sol.coef = Vec::new();
            Ok((rows, vals, sol))
        })
        .collect::<Result<_>>()?;

    let mut stats = CodingStats::default();
    let mut lambdas = Vec::with_capacity(solved.len());
    let mut columns = Vec::with_capacity(solved.len());
    for (rows, vals, sol) in solved {
        stats.max_kkt = stats.max_kkt.max(sol.kkt);
        stats.unconverged += usize::from(!sol.converged);
        stats.skipped_atoms += sol.skipped_atoms;
        stats.zero_columns += usize::from(rows.is_empty());
        stats.total_sweeps += sol.sweeps;
        lambdas.push(sol.lambda);
        columns.push((rows, vals));
    }
    if stats.unconverged > 0 {
        log::warn!(
            "{} of {} columns hit the sweep limit (max KKT residual {:.3e})",
            stats.unconverged,
            data.len(),
            stats.max_kkt
        );
    }
    Ok(Coding {
        coefficients: CoefficientMatrix::from_columns(m, columns),
        lambdas,
        stats,
    })
}

/// λ for one column. When every usable correlation is zero the zero code is
/// optimal for any λ and `alpha` itself is returned.
pub fn column_lambda(dict: &Dictionary, x: &[f64], excluded: Option<usize>, mode: LambdaMode) -> f64 {
    match mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Adaptive(alpha) => {
            let mu = dict
                .correlations(x)
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != excluded)
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max);
            if mu > 0.0 {
                alpha / mu
            } else {
                alpha
            }
        }
    }
}
