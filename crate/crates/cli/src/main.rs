//! Command-line front end: dataset generation, single training runs, and
//! benchmark sweeps with reproducible outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod bench;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trunccluster_core::datagen::{self, BirchSpec, MatrixFormat};
use trunccluster_core::runner::{run, Algorithm, RunConfig};
use trunccluster_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "trunccluster",
    version,
    about = "Truncated variational EM for Gaussian mixtures and k-means",
    after_help = "Environment:\n  TRUNCCLUSTER_THREADS  worker thread count when --threads is not given"
)]
struct Cli {
    /// Worker threads (default: all cores, or TRUNCCLUSTER_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Byte-stable outputs: forces serial reductions and zeroes recorded
    /// wall times.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid-of-Gaussians dataset (CSV plus a JSON
    /// sidecar with the ground-truth centers).
    Generate(GenerateArgs),
    /// Train one algorithm on a dataset; writes <prefix>.trace.jsonl and
    /// <prefix>.summary.json.
    Run(RunArgs),
    /// Run a benchmark suite; writes <dir>/report.json.
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Grid side length; the dataset has side^2 clusters. [default: 5]
    #[arg(long = "birch-side", default_value_t = 5)]
    birch_side: usize,

    /// Samples per cluster. [default: 100]
    #[arg(long, default_value_t = 100)]
    samples: usize,

    /// Per-dimension cluster variance. [default: 1]
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,

    /// Nearest-neighbor center distance. [default: 4*sqrt(2)]
    #[arg(long, default_value_t = BirchSpec::DEFAULT_SPACING)]
    spacing: f64,

    /// Generation seed. [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path; the sidecar is written to <out>.meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// One of: gmm-full, kmeans, var-gmm-x, var-gmm-s, var-kmeans-x,
    /// var-kmeans-s.
    #[arg(long)]
    algorithm: String,

    /// Input matrix file.
    #[arg(long)]
    input: PathBuf,

    /// Number of clusters C.
    #[arg(long)]
    clusters: usize,

    /// Neighborhood size G. [default: 5 for variational algorithms;
    /// ignored by gmm-full/kmeans]
    #[arg(long)]
    g: Option<usize>,

    /// Truncation set size C'. [default: g for var-gmm-*, 1 for
    /// var-kmeans-*]
    #[arg(long)]
    cprime: Option<usize>,

    /// Add one uniformly random exploratory cluster per point per
    /// iteration. [default: off]
    #[arg(long)]
    explore: bool,

    /// E-only iterations before the first M-step. [default: 0]
    #[arg(long = "init-esteps", default_value_t = 0)]
    init_esteps: usize,

    /// Iteration cap, counting initial E-steps. [default: 200]
    #[arg(long = "max-iters", default_value_t = 200)]
    max_iters: usize,

    /// Convergence: relative quantization-error change below this for 3
    /// consecutive iterations. [default: 1e-6]
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,

    /// Run seed. [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output prefix P; writes P.trace.jsonl and P.summary.json.
    #[arg(long = "out-prefix")]
    out_prefix: String,

    /// Record the log-likelihood each iteration (an extra O(N*C*D) pass,
    /// kept out of the training counters). [default: off]
    #[arg(long = "with-loglik")]
    with_loglik: bool,

    /// Input format. [default: csv]
    #[arg(long, value_parser = ["csv", "whitespace"], default_value = "csv")]
    format: String,

    /// Z-score each input dimension before training. [default: off]
    #[arg(long)]
    standardize: bool,

    /// Trace file of a converged baseline run; enables the parity iteration
    /// in the summary.
    #[arg(long = "baseline-trace")]
    baseline_trace: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_) | CoreError::DimensionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = setup_threads(cli.threads, cli.deterministic) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args, cli.deterministic),
        Command::Bench(args) => bench::cmd_bench(args, cli.deterministic),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn setup_threads(threads: Option<usize>, deterministic: bool) -> Result<(), String> {
    let from_env = std::env::var("TRUNCCLUSTER_THREADS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| format!("TRUNCCLUSTER_THREADS is not a number: {v:?}"))
        })
        .transpose()?;
    let requested = if deterministic {
        Some(1)
    } else {
        threads.or(from_env)
    };
    if let Some(n) = requested {
        if n == 0 {
            return Err("--threads must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = BirchSpec {
        grid_side: args.birch_side,
        samples_per_cluster: args.samples,
        cluster_sigma_sq: args.sigma,
        spacing: args.spacing,
        rng_seed: args.seed,
    };
    let (data, centers) = datagen::generate_birch(&spec)?;
    datagen::write_matrix_csv(&args.out, &data)?;
    output::write_birch_meta(&args.out, &spec, &centers)?;
    println!(
        "wrote {} points ({} clusters) to {}",
        data.n_points(),
        spec.n_clusters(),
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs, deterministic: bool) -> Result<(), CliError> {
    let algorithm = Algorithm::parse(&args.algorithm)?;
    // G defaults to 5 only where it is meaningful; the full algorithms
    // always search every cluster.
    let g = if algorithm.is_variational() {
        args.g.or(Some(5))
    } else {
        args.g
    };
    let config = RunConfig::new(algorithm, args.clusters, g, args.cprime)?
        .with_explore(args.explore)
        .with_initial_esteps(args.init_esteps)
        .with_max_iters(args.max_iters)
        .with_tol(args.tol)
        .with_seed(args.seed)
        .with_loglik(args.with_loglik)
        .with_deterministic(deterministic);

    let format = match args.format.as_str() {
        "whitespace" => MatrixFormat::Whitespace,
        _ => MatrixFormat::Csv,
    };
    let mut data = datagen::load_matrix(&args.input, format)?;
    if args.standardize {
        data = datagen::standardize_columns(&data);
    }

    let baseline = args
        .baseline_trace
        .as_deref()
        .map(output::read_trace)
        .transpose()?;

    let (params, _, trace) = run(config.clone(), &data)?;
    output::write_trace(&args.out_prefix, &config, &data, &trace)?;
    output::write_summary(
        &args.out_prefix,
        &config,
        &data,
        &params,
        &trace,
        baseline.as_ref(),
    )?;
    println!(
        "ran {} for {} iterations; outputs at {}.trace.jsonl and {}.summary.json",
        algorithm.name(),
        trace.records.len(),
        args.out_prefix,
        args.out_prefix
    );
    Ok(())
}
