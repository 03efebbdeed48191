//! Seeded benchmark sweeps over synthetic union-of-subspaces data.
//!
//! Each trial draws a fresh dataset from its own seed; every method and
//! parameter value in that trial sees the same dataset, so comparisons are
//! paired. Trials run sequentially so that timings are not distorted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FscError, Result};
use crate::landmarks::LandmarkMethod;
use crate::pipeline::{fsc, stage_seed, FscConfig};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchMethod {
    #[serde(rename = "fsc-uniform")]
    FscUniform,
    #[serde(rename = "fsc-kmedoids")]
    FscKmedoids,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::FscUniform => "fsc-uniform",
            BenchMethod::FscKmedoids => "fsc-kmedoids",
        }
    }

    fn sampling(self) -> LandmarkMethod {
        match self {
            BenchMethod::FscUniform => LandmarkMethod::Uniform,
            BenchMethod::FscKmedoids => LandmarkMethod::KMedoids,
        }
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fsc-uniform" | "uniform" => Ok(BenchMethod::FscUniform),
            "fsc-kmedoids" | "kmedoids" => Ok(BenchMethod::FscKmedoids),
            _ => Err(format!("unknown method {s:?}")),
        }
    }
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: BenchMethod,
    pub m: usize,
    pub n: usize,
    pub trial: usize,
    pub accuracy: f64,
    pub seconds: f64,
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: BenchMethod,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub time_mean_s: f64,
    pub time_median_s: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Settings shared by both sweeps. `template` supplies every pipeline
/// parameter except `k`, `m`, sampling and the seed.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SynthConfig,
    pub trials: usize,
    pub methods: Vec<BenchMethod>,
    pub template: FscConfig,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(base: SynthConfig, trials: usize, methods: Vec<BenchMethod>, seed: u64) -> Self {
        let k = base.num_subspaces();
        SweepSpec {
            template: FscConfig::new(k, k, LandmarkMethod::Uniform, seed),
            base,
            trials,
            methods,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(FscError::InvalidConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(FscError::InvalidConfig("no methods given".into()));
        }
        self.base.validate()
    }

    fn dataset(&self, base: &SynthConfig, trial: usize) -> Result<Dataset> {
        generate(&SynthConfig {
            seed: stage_seed(self.seed, &format!("data-{trial}")),
            ..base.clone()
        })
    }

    fn run(&self, data: &Dataset, method: BenchMethod, m: usize, trial: usize) -> Result<TrialRecord> {
        let config = FscConfig {
            k: self.base.num_subspaces(),
            m,
            sampling: method.sampling(),
            seed: stage_seed(self.seed, &format!("fsc-{trial}")),
            ..self.template.clone()
        };
        let result = fsc(data, &config)?;
        Ok(TrialRecord {
            method,
            m,
            n: data.len(),
            trial,
            accuracy: result.accuracy.expect("synthetic data carries labels"),
            seconds: result.timings.total,
        })
    }
}

/// Accuracy and runtime as the number of landmarks varies on fixed-size data.
pub fn sweep_landmarks(spec: &SweepSpec, m_values: &[usize]) -> Result<Sweep> {
    spec.check()?;
    let mut records = Vec::new();
    for trial in 0..spec.trials {
        let data = spec.dataset(&spec.base, trial)?;
        for &m in m_values {
            for &method in &spec.methods {
                records.push(spec.run(&data, method, m, trial)?);
            }
        }
    }
    Ok(summarize(records, m_values.iter().map(|&m| (m, spec.base.total_points())), &spec.methods))
}

/// Accuracy and runtime as the number of points varies with `m` fixed.
/// Each `n` must split evenly across the subspaces.
pub fn sweep_datasize(spec: &SweepSpec, n_values: &[usize], m: usize) -> Result<Sweep> {
    spec.check()?;
    let k = spec.base.num_subspaces();
    if let Some(&n) = n_values.iter().find(|&&n| n % k != 0 || n == 0) {
        return Err(FscError::InvalidConfig(format!("{n} points do not split evenly over {k} subspaces")));
    }
    let mut records = Vec::new();
    for trial in 0..spec.trials {
        for &n in n_values {
            let base = SynthConfig {
                points_per_subspace: vec![n / k; k],
                ..spec.base.clone()
            };
            let data = spec.dataset(&base, trial)?;
            for &method in &spec.methods {
                records.push(spec.run(&data, method, m, trial)?);
            }
        }
    }
    Ok(summarize(records, n_values.iter().map(|&n| (m, n)), &spec.methods))
}

fn summarize(records: Vec<TrialRecord>, points: impl Iterator<Item = (usize, usize)>, methods: &[BenchMethod]) -> Sweep {
    let mut summary = Vec::new();
    for (m, n) in points {
        for &method in methods {
            let group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.method == method && r.m == m && r.n == n)
                .collect();
            let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
            let times: Vec<f64> = group.iter().map(|r| r.seconds).collect();
            let (acc_mean, acc_std) = mean_std(&acc);
            summary.push(SummaryRow {
                method,
                m,
                n,
                trials: group.len(),
                acc_mean,
                acc_std,
                time_mean_s: mean_std(&times).0,
                time_median_s: median(&times),
            });
        }
    }
    Sweep { records, summary }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, _) = mean_std(&lx);
    let (my, _) = mean_std(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Writes the summary as CSV with columns
/// `method,m,n,trials,acc_mean,acc_std,time_mean_s,time_median_s`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| FscError::io("<summary>", e))?;
    Ok(())
}
