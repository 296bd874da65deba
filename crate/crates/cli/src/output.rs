//! Output files: JSONL traces, run summaries, and dataset sidecars.
//!
//! Every file starts from or contains a `"schema": 1` marker. Trace files
//! carry one meta line followed by one JSON object per iteration with
//! exactly the trace-record fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trunccluster_core::data::{Dataset, ModelParams};
use trunccluster_core::datagen::BirchSpec;
use trunccluster_core::runner::{
    iterations_to_parity, speedup_report, theoretical_speedup, IterRecord, RunConfig, RunTrace,
    SpeedupReport,
};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    schema: u32,
    kind: String,
    config: RunConfig,
    n_points: usize,
    dims: usize,
}

pub fn trace_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.trace.jsonl"))
}

pub fn summary_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.summary.json"))
}

pub fn write_trace(
    prefix: &str,
    config: &RunConfig,
    data: &Dataset,
    trace: &RunTrace,
) -> Result<(), CliError> {
    let meta = TraceMeta {
        schema: SCHEMA_VERSION,
        kind: "trace".into(),
        config: config.clone(),
        n_points: data.n_points(),
        dims: data.dims(),
    };
    let mut out = serde_json::to_string(&meta).expect("meta serializes");
    out.push('\n');
    for record in &trace.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(trace_path(prefix), out)?;
    Ok(())
}

/// Reads a trace file back (meta line first, then records).
pub fn read_trace(path: &Path) -> Result<RunTrace, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let meta_line = lines
        .next()
        .ok_or_else(|| CliError::Runtime(format!("{}: empty trace file", path.display())))?;
    let meta: TraceMeta = serde_json::from_str(meta_line)
        .map_err(|e| CliError::Runtime(format!("{}: bad trace meta: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let record: IterRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Runtime(format!("{}: bad record on line {}: {e}", path.display(), i + 2))
        })?;
        records.push(record);
    }
    Ok(RunTrace {
        algorithm: meta.config.algorithm,
        n_clusters: meta.config.n_clusters,
        c_prime: meta.config.c_prime,
        g: meta.config.g,
        explore: meta.config.explore,
        records,
    })
}

#[derive(Serialize)]
struct Summary {
    schema: u32,
    kind: String,
    config: RunConfig,
    n_points: usize,
    dims: usize,
    iterations: usize,
    final_free_energy: Option<f64>,
    final_quantization_error: Option<f64>,
    final_log_likelihood: Option<f64>,
    params_digest: String,
    speedup: Option<SpeedupReport>,
    iterations_to_parity: Option<usize>,
    parity_reached: Option<bool>,
}

pub fn write_summary(
    prefix: &str,
    config: &RunConfig,
    data: &Dataset,
    params: &ModelParams,
    trace: &RunTrace,
    baseline: Option<&RunTrace>,
) -> Result<(), CliError> {
    // Counted-eval speedup against a full E-step baseline; a full E-step
    // costs exactly N*C per iteration, so the implied baseline is exact
    // even when no baseline trace is supplied.
    let speedup = trace.mean_data_evals_per_iter().map(|mean| match baseline {
        Some(b) => speedup_report(trace, b),
        None => SpeedupReport {
            theoretical_min: theoretical_speedup(config),
            measured: (data.n_points() * config.n_clusters) as f64 / mean,
        },
    });
    let (parity, parity_reached) = match baseline {
        Some(b) => {
            let p = iterations_to_parity(
                std::slice::from_ref(trace),
                std::slice::from_ref(b),
            );
            (p, Some(p.is_some()))
        }
        None => (None, None),
    };
    let last = trace.records.last();
    let summary = Summary {
        schema: SCHEMA_VERSION,
        kind: "run-summary".into(),
        config: config.clone(),
        n_points: data.n_points(),
        dims: data.dims(),
        iterations: trace.records.len(),
        final_free_energy: last.map(|r| r.free_energy),
        final_quantization_error: last.map(|r| r.quantization_error),
        final_log_likelihood: last.and_then(|r| r.log_likelihood),
        params_digest: params_digest(params),
        speedup,
        iterations_to_parity: parity,
        parity_reached,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(summary_path(prefix), text)?;
    Ok(())
}

/// SHA-256 over the little-endian bytes of the means and the variance.
pub fn params_digest(params: &ModelParams) -> String {
    let mut hasher = Sha256::new();
    for v in params.means() {
        hasher.update(v.to_le_bytes());
    }
    hasher.update(params.sigma_sq().to_le_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(7 + digest.len() * 2);
    hex.push_str("sha256:");
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Serialize)]
struct BirchMeta<'a> {
    schema: u32,
    kind: String,
    grid_side: usize,
    samples_per_cluster: usize,
    cluster_sigma_sq: f64,
    spacing: f64,
    rng_seed: u64,
    n_clusters: usize,
    n_points: usize,
    centers: Vec<&'a [f64]>,
}

pub fn write_birch_meta(
    csv_path: &Path,
    spec: &BirchSpec,
    centers: &[f64],
) -> Result<(), CliError> {
    let meta = BirchMeta {
        schema: SCHEMA_VERSION,
        kind: "birch-meta".into(),
        grid_side: spec.grid_side,
        samples_per_cluster: spec.samples_per_cluster,
        cluster_sigma_sq: spec.cluster_sigma_sq,
        spacing: spec.spacing,
        rng_seed: spec.rng_seed,
        n_clusters: spec.n_clusters(),
        n_points: spec.n_points(),
        centers: centers.chunks(2).collect(),
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    let mut path = csv_path.as_os_str().to_owned();
    path.push(".meta.json");
    std::fs::write(PathBuf::from(path), text)?;
    Ok(())
}
