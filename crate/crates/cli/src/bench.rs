//! The birch-scaling benchmark suite: baseline k-means and variational
//! variants across grid sizes, aggregating iterations-to-parity and
//! counted-eval speedups over independent seeds.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use trunccluster_core::datagen::{generate_birch, BirchSpec};
use trunccluster_core::rng::RngStream;
use trunccluster_core::runner::{
    iterations_to_parity, run, speedup_report, theoretical_speedup, Algorithm, RunConfig,
    RunTrace,
};

use crate::output::SCHEMA_VERSION;
use crate::CliError;

#[derive(Args)]
pub struct BenchArgs {
    /// Benchmark suite name. [default: birch-scaling]
    #[arg(long, default_value = "birch-scaling")]
    suite: String,

    /// Comma-separated grid sides; each size has side^2 clusters.
    /// [default: 8,16]
    #[arg(long, value_delimiter = ',', default_value = "8,16")]
    sides: Vec<usize>,

    /// Independent training runs per configuration. [default: 5]
    #[arg(long, default_value_t = 5)]
    seeds: u64,

    /// Output directory for report.json.
    #[arg(long)]
    out: PathBuf,

    /// Neighborhood size for the variational variants. [default: 5]
    #[arg(long, default_value_t = 5)]
    g: usize,

    /// Disable the exploratory extra cluster (on by default here, matching
    /// the G+1 protocol).
    #[arg(long = "no-explore")]
    no_explore: bool,

    /// Variational algorithms to compare against the k-means baseline.
    /// [default: var-kmeans-s]
    #[arg(long, value_delimiter = ',', default_value = "var-kmeans-s")]
    variants: Vec<String>,

    /// E-only iterations before the first M-step. [default: 5 when
    /// side^2 >= 256, else 0]
    #[arg(long = "init-esteps")]
    init_esteps: Option<usize>,

    /// Iteration cap per run. [default: 200]
    #[arg(long = "max-iters", default_value_t = 200)]
    max_iters: usize,

    /// Convergence tolerance. [default: 1e-6]
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,

    /// Samples per cluster in the generated data. [default: 100]
    #[arg(long, default_value_t = 100)]
    samples: usize,

    /// Master seed for data generation and run seeds. [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct Report {
    schema: u32,
    kind: String,
    suite: String,
    master_seed: u64,
    seeds_per_config: u64,
    sizes: Vec<SizeEntry>,
}

#[derive(Serialize)]
struct SizeEntry {
    side: usize,
    n_clusters: usize,
    n_points: usize,
    initial_esteps: usize,
    baseline: BaselineEntry,
    variants: Vec<VariantEntry>,
}

#[derive(Serialize)]
struct BaselineEntry {
    algorithm: &'static str,
    mean_final_quantization_error: f64,
    sem_final_quantization_error: f64,
    mean_iterations: f64,
    sem_iterations: f64,
}

#[derive(Serialize)]
struct VariantEntry {
    algorithm: &'static str,
    g: usize,
    explore: bool,
    /// Parity of the mean trace against the baseline's converged mean;
    /// null when never reached.
    iterations_to_parity: Option<usize>,
    /// Per-seed parity; null entries never reached parity.
    parity_per_seed: Vec<Option<usize>>,
    parity_all_reached: bool,
    parity_mean: Option<f64>,
    parity_sem: Option<f64>,
    speedup_theoretical: f64,
    speedup_measured_mean: f64,
    speedup_measured_sem: f64,
    mean_final_quantization_error: f64,
    sem_final_quantization_error: f64,
}

fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn cmd_bench(args: BenchArgs, deterministic: bool) -> Result<(), CliError> {
    if args.suite != "birch-scaling" {
        return Err(CliError::Usage(format!(
            "unknown suite {:?} (available: birch-scaling)",
            args.suite
        )));
    }
    if args.sides.is_empty() {
        return Err(CliError::Usage("--sides must list at least one size".into()));
    }
    let variants: Vec<Algorithm> = args
        .variants
        .iter()
        .map(|name| {
            let algo = Algorithm::parse(name)?;
            if !algo.is_variational() {
                return Err(trunccluster_core::Error::InvalidArgument(format!(
                    "bench variants must be variational algorithms, got {name}"
                )));
            }
            Ok(algo)
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::from)?;

    let stream = RngStream::new(args.seed);
    let mut sizes = Vec::new();
    for &side in &args.sides {
        let c = side * side;
        let spec = BirchSpec {
            grid_side: side,
            samples_per_cluster: args.samples,
            cluster_sigma_sq: 1.0,
            spacing: BirchSpec::DEFAULT_SPACING,
            rng_seed: stream.fork(side as u64).seed(),
        };
        let (data, _) = generate_birch(&spec)?;
        let initial_esteps = args.init_esteps.unwrap_or(if c >= 256 { 5 } else { 0 });

        let mut baselines = Vec::new();
        for k in 0..args.seeds {
            let cfg = RunConfig::new(Algorithm::KmeansFull, c, None, None)?
                .with_seed(stream.fork(1 + side as u64).fork(k).seed())
                .with_max_iters(args.max_iters)
                .with_tol(args.tol)
                .with_deterministic(deterministic);
            baselines.push(run(cfg, &data)?.2);
        }
        let base_finals: Vec<f64> = baselines
            .iter()
            .filter_map(RunTrace::final_quantization_error)
            .collect();
        let base_iters: Vec<f64> = baselines.iter().map(|t| t.records.len() as f64).collect();
        let (bq_mean, bq_sem) = mean_sem(&base_finals);
        let (bi_mean, bi_sem) = mean_sem(&base_iters);

        let mut variant_entries = Vec::new();
        for &algo in &variants {
            let mut traces = Vec::new();
            let mut measured = Vec::new();
            let mut theoretical = 0.0;
            for k in 0..args.seeds {
                let cfg = RunConfig::new(algo, c, Some(args.g), None)?
                    .with_explore(!args.no_explore)
                    .with_seed(stream.fork(2 + side as u64).fork(k).seed())
                    .with_initial_esteps(initial_esteps)
                    .with_max_iters(args.max_iters)
                    .with_tol(args.tol)
                    .with_deterministic(deterministic);
                theoretical = theoretical_speedup(&cfg);
                let trace = run(cfg, &data)?.2;
                measured.push(speedup_report(&trace, &baselines[k as usize]).measured);
                traces.push(trace);
            }
            let parity = iterations_to_parity(&traces, &baselines);
            let parity_per_seed: Vec<Option<usize>> = traces
                .iter()
                .map(|t| iterations_to_parity(std::slice::from_ref(t), &baselines))
                .collect();
            let reached: Vec<f64> = parity_per_seed
                .iter()
                .flatten()
                .map(|&p| p as f64)
                .collect();
            let (parity_mean, parity_sem) = if reached.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sem(&reached);
                (Some(m), Some(s))
            };
            let finals: Vec<f64> = traces
                .iter()
                .filter_map(RunTrace::final_quantization_error)
                .collect();
            let (vq_mean, vq_sem) = mean_sem(&finals);
            let (sm_mean, sm_sem) = mean_sem(&measured);
            variant_entries.push(VariantEntry {
                algorithm: algo.name(),
                g: args.g,
                explore: !args.no_explore,
                iterations_to_parity: parity,
                parity_all_reached: parity_per_seed.iter().all(Option::is_some)
                    && parity.is_some(),
                parity_per_seed,
                parity_mean,
                parity_sem,
                speedup_theoretical: theoretical,
                speedup_measured_mean: sm_mean,
                speedup_measured_sem: sm_sem,
                mean_final_quantization_error: vq_mean,
                sem_final_quantization_error: vq_sem,
            });
        }

        sizes.push(SizeEntry {
            side,
            n_clusters: c,
            n_points: data.n_points(),
            initial_esteps,
            baseline: BaselineEntry {
                algorithm: Algorithm::KmeansFull.name(),
                mean_final_quantization_error: bq_mean,
                sem_final_quantization_error: bq_sem,
                mean_iterations: bi_mean,
                sem_iterations: bi_sem,
            },
            variants: variant_entries,
        });
    }

    let report = Report {
        schema: SCHEMA_VERSION,
        kind: "bench-report".into(),
        suite: args.suite.clone(),
        master_seed: args.seed,
        seeds_per_config: args.seeds,
        sizes,
    };
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}
