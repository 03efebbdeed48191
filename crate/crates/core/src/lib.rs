//! Landmark-based sparse subspace clustering.
//!
//! Points drawn from a union of low-dimensional subspaces are segmented by
//! coding each point as a sparse combination of `m` landmark points and
//! clustering the rows of a spectral embedding computed in time linear in
//! the number of points:
//!
//! 1. pick landmarks uniformly or as K-medoids centers ([`landmarks`]),
//! 2. solve one ℓ1-regularized least-squares problem per point ([`lasso`]),
//! 3. embed with the top singular vectors of `|C| D^{-1/2}` ([`spectral`]),
//! 4. run K-means on the embedding rows ([`kmeans`]).
//!
//! [`pipeline::fsc`] runs all four steps. [`oracle::full_ssc`] is the dense
//! all-points reference used for validation on small inputs.

pub mod data;
pub mod error;
pub mod harness;
pub mod kmeans;
pub mod landmarks;
pub mod lasso;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use data::{load_csv, normalize_columns, save_csv, save_result, Dataset, LabelColumn, ResultFormat};
pub use error::{FscError, Result};
pub use kmeans::{KMeansParams, KMeansResult};
pub use landmarks::{KMedoidsParams, LandmarkMethod, LandmarkSet};
pub use lasso::{CoefficientMatrix, LambdaMode, SolverParams};
pub use metrics::{clustering_accuracy, ClusteringResult, StageTimings};
pub use oracle::{full_ssc, Affinity, OracleConfig};
pub use pipeline::{fsc, fsc_detailed, FscConfig};
pub use spectral::SpectralEmbedding;
pub use synth::SynthConfig;
