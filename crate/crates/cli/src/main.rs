use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fsc_core::harness::{mean_std, median, sweep_datasize, sweep_landmarks, write_summary_csv, BenchMethod, SweepSpec};
use fsc_core::pipeline::fsc_detailed;
use fsc_core::spectral::write_embedding_csv;
use fsc_core::synth::generate;
use fsc_core::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fsc", version, about = "Landmark-based sparse subspace clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic union-of-subspaces dataset as CSV with a trailing label column.
    Synth(SynthArgs),
    /// Cluster the samples (rows) of a CSV file.
    Cluster(ClusterArgs),
    /// Accuracy and runtime sweeps on synthetic data.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Clone)]
struct SynthShape {
    /// Ambient dimension.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Number of subspaces.
    #[arg(long, default_value_t = 5)]
    subspaces: usize,
    /// Dimension of every subspace.
    #[arg(long, default_value_t = 6)]
    subspace_dim: usize,
    #[arg(long, default_value_t = 720)]
    points_per_subspace: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

impl SynthShape {
    fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig::uniform(self.dim, self.subspaces, self.subspace_dim, self.points_per_subspace, self.noise, seed)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shape: SynthShape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Omit the header row.
    #[arg(long)]
    no_header: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaKind {
    Adaptive,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Uniform,
    Kmedoids,
}

impl From<Sampling> for LandmarkMethod {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Uniform => LandmarkMethod::Uniform,
            Sampling::Kmedoids => LandmarkMethod::KMedoids,
        }
    }
}

/// Settings shared by every stage of the pipeline.
#[derive(Args)]
struct StageArgs {
    /// Number of landmarks.
    #[arg(long, default_value_t = 200)]
    landmarks: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    sampling: Sampling,
    #[arg(long, default_value_t = 100)]
    kmedoids_iters: usize,
    /// Candidate pool size for K-medoids initialization and updates.
    #[arg(long, default_value_t = 20_000)]
    pool_cap: usize,
    #[arg(long, value_enum, default_value = "adaptive")]
    lambda_mode: LambdaKind,
    /// Multiplier for the adaptive λ.
    #[arg(long, default_value_t = 20.0)]
    alpha_lambda: f64,
    /// λ for --lambda-mode fixed.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-7)]
    cd_tol: f64,
    #[arg(long, default_value_t = 500)]
    cd_max_sweeps: usize,
    #[arg(long, default_value_t = 100)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 10)]
    kmeans_restarts: usize,
    /// Skip unit-norm scaling of the input points.
    #[arg(long)]
    no_normalize: bool,
    /// Skip unit-norm scaling of the embedding rows before K-means.
    #[arg(long)]
    no_row_normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl StageArgs {
    fn solver(&self) -> Result<SolverParams> {
        let lambda = match (self.lambda_mode, self.lambda) {
            (LambdaKind::Adaptive, None) => LambdaMode::Adaptive(self.alpha_lambda),
            (LambdaKind::Adaptive, Some(_)) => bail!("--lambda requires --lambda-mode fixed"),
            (LambdaKind::Fixed, Some(l)) => LambdaMode::Fixed(l),
            (LambdaKind::Fixed, None) => bail!("--lambda-mode fixed requires --lambda"),
        };
        Ok(SolverParams {
            lambda,
            tol: self.cd_tol,
            max_sweeps: self.cd_max_sweeps,
            ..SolverParams::default()
        })
    }

    fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.kmeans_iters,
            n_init: self.kmeans_restarts,
        }
    }

    fn fsc_config(&self, k: usize, seed: u64) -> Result<FscConfig> {
        Ok(FscConfig {
            kmedoids: KMedoidsParams {
                max_iter: self.kmedoids_iters,
                pool_cap: self.pool_cap,
            },
            solver: self.solver()?,
            kmeans: self.kmeans(),
            normalize_columns: !self.no_normalize,
            normalize_rows: !self.no_row_normalize,
            ..FscConfig::new(k, self.landmarks, self.sampling.into(), seed)
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Fsc,
    FullSsc,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Number of clusters. Defaults to the number of distinct labels.
    #[arg(short = 'k', long)]
    clusters: Option<usize>,
    #[arg(long, value_enum, default_value = "fsc")]
    method: Method,
    /// The input has no header row.
    #[arg(long)]
    no_header: bool,
    /// Ground-truth column: `last`, a 0-based index or a header name.
    #[arg(long)]
    label_column: Option<LabelColumn>,
    #[command(flatten)]
    stages: StageArgs,
    /// Affinity for --method full-ssc.
    #[arg(long, default_value = "symmetric")]
    affinity: Affinity,
    #[arg(long, default_value_t = oracle::DEFAULT_ORACLE_CAP)]
    oracle_cap: usize,
    /// Repeat with seeds seed, seed+1, ... and report a summary.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Result file. Without it the JSON result goes to stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ResultFormat,
    /// Write the embedding rows and degrees to this CSV.
    #[arg(long)]
    dump_embedding: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Vary the number of landmarks on fixed-size data.
    Landmarks(LandmarkBenchArgs),
    /// Vary the number of points with the number of landmarks fixed.
    Datasize(DatasizeBenchArgs),
}

#[derive(Args)]
struct BenchCommon {
    #[command(flatten)]
    shape: SynthShape,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "fsc-uniform,fsc-kmedoids")]
    methods: Vec<BenchMethod>,
    /// Summary CSV path. Defaults to stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LandmarkBenchArgs {
    #[command(flatten)]
    common: BenchCommon,
    #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500")]
    m_values: Vec<usize>,
    #[command(flatten)]
    stages: StageArgs,
}

#[derive(Args)]
struct DatasizeBenchArgs {
    #[command(flatten)]
    common: BenchCommon,
    #[arg(long, value_delimiter = ',', default_value = "3000,6000,9000,12000,15000")]
    n_values: Vec<usize>,
    #[command(flatten)]
    stages: StageArgs,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(args) => synth(args),
        Command::Cluster(args) => cluster(args),
        Command::Bench(BenchCommand::Landmarks(args)) => {
            let spec = sweep_spec(&args.common, &args.stages)?;
            let sweep = sweep_landmarks(&spec, &args.m_values)?;
            write_summary(&sweep.summary, args.common.output.as_deref())
        }
        Command::Bench(BenchCommand::Datasize(args)) => {
            let spec = sweep_spec(&args.common, &args.stages)?;
            let sweep = sweep_datasize(&spec, &args.n_values, args.stages.landmarks)?;
            write_summary(&sweep.summary, args.common.output.as_deref())
        }
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let data = generate(&args.shape.config(args.seed))?;
    save_csv(&data, &args.output, !args.no_header)?;
    log::info!("wrote {} points of dimension {} to {}", data.len(), data.dim(), args.output.display());
    Ok(())
}

fn cluster(args: ClusterArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let data = load_csv(&args.input, !args.no_header, args.label_column.as_ref())
        .with_context(|| format!("reading {}", args.input.display()))?;
    let k = match (args.clusters, data.num_classes()) {
        (Some(k), _) => k,
        (None, Some(k)) => k,
        (None, None) => bail!("--clusters is required when the input has no label column"),
    };
    if args.dump_embedding.is_some() && args.method != Method::Fsc {
        bail!("--dump-embedding is only available with --method fsc");
    }

    let mut results = Vec::with_capacity(args.trials);
    for t in 0..args.trials {
        let seed = args.stages.seed.wrapping_add(t as u64);
        results.push(run_once(&args, &data, k, seed)?);
    }

    if args.trials == 1 {
        let result = &results[0];
        match &args.output {
            Some(path) => save_result(result, path, args.format)?,
            None => println!("{}", serde_json::to_string_pretty(result)?),
        }
        if let Some(acc) = result.accuracy {
            eprintln!("accuracy {acc:.4}, total {:.3}s", result.timings.total);
        }
        return Ok(());
    }

    let summary = trial_summary(&results);
    match (&args.output, args.format) {
        (Some(path), ResultFormat::Csv) => write_trials_csv(&results, File::create(path)?)?,
        (Some(path), ResultFormat::Json) => {
            serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &summary)?;
        }
        (None, ResultFormat::Csv) => write_trials_csv(&results, io::stdout().lock())?,
        (None, ResultFormat::Json) => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(())
}

fn run_once(args: &ClusterArgs, data: &Dataset, k: usize, seed: u64) -> Result<ClusteringResult> {
    match args.method {
        Method::Fsc => {
            let run = fsc_detailed(data, &args.stages.fsc_config(k, seed)?)?;
            if let Some(path) = &args.dump_embedding {
                write_embedding_csv(&run.embedding, path)?;
            }
            Ok(run.result)
        }
        Method::FullSsc => {
            let config = OracleConfig {
                solver: args.stages.solver()?,
                kmeans: args.stages.kmeans(),
                affinity: args.affinity,
                normalize_columns: !args.stages.no_normalize,
                normalize_rows: !args.stages.no_row_normalize,
                oracle_cap: args.oracle_cap,
                ..OracleConfig::new(k, seed)
            };
            Ok(full_ssc(data, &config)?)
        }
    }
}

fn trial_summary(results: &[ClusteringResult]) -> serde_json::Value {
    let times: Vec<f64> = results.iter().map(|r| r.timings.total).collect();
    let accs: Option<Vec<f64>> = results.iter().map(|r| r.accuracy).collect();
    let (acc_mean, acc_std) = match &accs {
        Some(a) => {
            let (m, s) = mean_std(a);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    json!({
        "trials": results.len(),
        "acc_mean": acc_mean,
        "acc_std": acc_std,
        "time_mean_s": mean_std(&times).0,
        "time_median_s": median(&times),
        "runs": results
            .iter()
            .map(|r| json!({ "seed": r.seed, "accuracy": r.accuracy, "time_s": r.timings.total }))
            .collect::<Vec<_>>(),
    })
}

fn write_trials_csv(results: &[ClusteringResult], out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "trial,seed,accuracy,time_s")?;
    for (t, r) in results.iter().enumerate() {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{t},{},{acc},{}", r.seed, r.timings.total)?;
    }
    out.flush()?;
    Ok(())
}

fn sweep_spec(common: &BenchCommon, stages: &StageArgs) -> Result<SweepSpec> {
    let base = common.shape.config(stages.seed);
    let mut spec = SweepSpec::new(base, common.trials, common.methods.clone(), stages.seed);
    spec.template = stages.fsc_config(common.shape.subspaces, stages.seed)?;
    Ok(spec)
}

fn write_summary(rows: &[harness::SummaryRow], output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => write_summary_csv(rows, File::create(path).with_context(|| format!("creating {}", path.display()))?)?,
        None => write_summary_csv(rows, io::stdout().lock())?,
    }
    Ok(())
}
