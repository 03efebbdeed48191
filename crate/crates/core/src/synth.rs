//! Union-of-subspaces data generator.
//!
//! Each subspace basis is a random subset of columns of one shared random
//! orthonormal `D x D` matrix, so distinct subspaces may share directions.
//! A point of subspace `k` is `H_k z + e` with `z ~ N(0, I)` and
//! `e ~ N(0, sigma^2 I)`.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FscError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub ambient_dim: usize,
    pub subspace_dims: Vec<usize>,
    pub points_per_subspace: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// `k` subspaces of equal dimension and equal population.
    pub fn uniform(
        ambient_dim: usize,
        k: usize,
        subspace_dim: usize,
        points_per_subspace: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        SynthConfig {
            ambient_dim,
            subspace_dims: vec![subspace_dim; k],
            points_per_subspace: vec![points_per_subspace; k],
            noise_sigma,
            seed,
        }
    }

    /// D=16, K=5, d=6, 720 points per subspace, sigma=0.1.
    pub fn reference(seed: u64) -> Self {
        SynthConfig::uniform(16, 5, 6, 720, 0.1, seed)
    }

    pub fn num_subspaces(&self) -> usize {
        self.subspace_dims.len()
    }

    pub fn total_points(&self) -> usize {
        self.points_per_subspace.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FscError::InvalidConfig(msg));
        if self.ambient_dim == 0 {
            return bad("ambient dimension must be positive".into());
        }
        if self.subspace_dims.is_empty() {
            return bad("at least one subspace is required".into());
        }
        if self.subspace_dims.len() != self.points_per_subspace.len() {
            return bad(format!(
                "{} subspace dimensions but {} population counts",
                self.subspace_dims.len(),
                self.points_per_subspace.len()
            ));
        }
        if let Some(d) = self
            .subspace_dims
            .iter()
            .find(|&&d| d == 0 || d >= self.ambient_dim)
        {
            return bad(format!(
                "subspace dimension {d} must lie in 1..{}",
                self.ambient_dim
            ));
        }
        if self.points_per_subspace.contains(&0) {
            return bad("every subspace needs at least one point".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

/// A generated dataset together with the bases that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `H_k`, one `D x d_k` orthonormal matrix per subspace.
    pub bases: Vec<DMatrix<f64>>,
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    generate_with_bases(config).map(|s| s.dataset)
}

pub fn generate_with_bases(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let dim = config.ambient_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let pool = orthonormal_from(dim, &mut rng);
    let bases: Vec<DMatrix<f64>> = config
        .subspace_dims
        .iter()
        .map(|&d| {
            let cols: Vec<usize> = index::sample(&mut rng, dim, d).into_vec();
            pool.select_columns(cols.iter())
        })
        .collect();

    let n = config.total_points();
    let noise = Normal::new(0.0, config.noise_sigma).expect("sigma validated");
    let mut points = DMatrix::<f64>::zeros(dim, n);
    let mut labels = Vec::with_capacity(n);
    let mut j = 0;
    for (k, (basis, &count)) in bases.iter().zip(&config.points_per_subspace).enumerate() {
        let mut z = nalgebra::DVector::<f64>::zeros(basis.ncols());
        for _ in 0..count {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let mut col = points.column_mut(j);
            col.gemv(1.0, basis, &z, 0.0);
            if config.noise_sigma > 0.0 {
                col.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            labels.push(k);
            j += 1;
        }
    }

    let dataset = Dataset::new(points, Some(labels))?.with_id(format!("synth-{}", config.seed));
    Ok(SyntheticData { dataset, bases })
}

/// Random `dim x dim` orthonormal matrix from the QR factorization of a
/// standard normal matrix, with column signs fixed so that `R` has a
/// nonnegative diagonal.
pub fn random_orthonormal(dim: usize, seed: u64) -> DMatrix<f64> {
    assert!(dim >= 1, "dimension must be positive");
    orthonormal_from(dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn orthonormal_from(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (i, mut col) in q.column_iter_mut().enumerate() {
        if r[(i, i)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(basis: &DMatrix<f64>, x: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(x);
        let proj = basis * (basis.transpose() * &x);
        (x - proj).norm()
    }

    #[test]
    fn reference_config_shape() {
        let d = generate(&SynthConfig::reference(1)).unwrap();
        assert_eq!((d.dim(), d.len()), (16, 3600));
        let labels = d.labels().unwrap();
        for k in 0..5 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 720);
        }
    }

    #[test]
    fn noiseless_points_lie_in_their_subspace() {
        let cfg = SynthConfig::uniform(16, 5, 6, 40, 0.0, 7);
        let s = generate_with_bases(&cfg).unwrap();
        let labels = s.dataset.labels().unwrap();
        for (j, x) in s.dataset.columns().enumerate() {
            let own = labels[j];
            assert!(residual(&s.bases[own], x) <= 1e-12);
            for (k, b) in s.bases.iter().enumerate() {
                if k != own {
                    assert!(residual(b, x) > 1e-6, "point {j} lies in subspace {k}");
                }
            }
        }
    }

    #[test]
    fn bases_are_orthonormal() {
        let s = generate_with_bases(&SynthConfig::uniform(10, 3, 4, 5, 0.1, 3)).unwrap();
        for b in &s.bases {
            let g = b.transpose() * b;
            let err = (g - DMatrix::identity(4, 4)).abs().max();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig::uniform(8, 3, 2, 30, 0.2, 99);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert!(a.points().iter().zip(b.points().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate(&SynthConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn noise_variance_matches_sigma() {
        // With d = 1 the noise is recovered exactly by projecting out the basis.
        let sigma = 0.3;
        let cfg = SynthConfig::uniform(11, 1, 1, 10_000, sigma, 5);
        let s = generate_with_bases(&cfg).unwrap();
        let h = &s.bases[0];
        let mut sum = 0.0;
        let mut count = 0usize;
        for x in s.dataset.columns() {
            let xv = nalgebra::DVector::from_column_slice(x);
            let r = &xv - h * (h.transpose() * &xv);
            sum += r.norm_squared();
            count += 10; // residual lives in a 10-dimensional complement
        }
        let var = sum / count as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn orthonormal_examples() {
        let q1 = random_orthonormal(1, 4);
        assert!((q1[(0, 0)].abs() - 1.0).abs() < 1e-15);
        let q = random_orthonormal(8, 4);
        let err = (q.transpose() * &q - DMatrix::identity(8, 8)).abs().max();
        assert!(err < 1e-12);
        assert_ne!(random_orthonormal(8, 5), q);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SynthConfig::uniform(4, 2, 4, 3, 0.1, 0);
        assert!(generate(&cfg).is_err());
        cfg.subspace_dims = vec![2, 2];
        cfg.points_per_subspace = vec![3];
        assert!(generate(&cfg).is_err());
        cfg.points_per_subspace = vec![3, 3];
        cfg.noise_sigma = -1.0;
        assert!(generate(&cfg).is_err());
    }
}
