//! Synthetic grid-of-Gaussians data sets and numeric matrix ingestion.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Specification of a BIRCH-style benchmark: `grid_side^2` isotropic
/// Gaussian clusters on a square grid with equal nearest-neighbor spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct BirchSpec {
    pub grid_side: usize,
    pub samples_per_cluster: usize,
    pub cluster_sigma_sq: f64,
    pub spacing: f64,
    pub rng_seed: u64,
}

impl BirchSpec {
    /// Benchmark default nearest-neighbor center distance, `4 * sqrt(2)`.
    pub const DEFAULT_SPACING: f64 = 4.0 * std::f64::consts::SQRT_2;

    pub fn n_clusters(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn n_points(&self) -> usize {
        self.n_clusters() * self.samples_per_cluster
    }

    fn validate(&self) -> Result<()> {
        if self.grid_side == 0 {
            return Err(Error::InvalidArgument("grid_side must be >= 1".into()));
        }
        if self.samples_per_cluster == 0 {
            return Err(Error::InvalidArgument(
                "samples_per_cluster must be >= 1".into(),
            ));
        }
        if !(self.cluster_sigma_sq > 0.0 && self.cluster_sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument(
                "cluster_sigma_sq must be positive and finite".into(),
            ));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidArgument(
                "spacing must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Generates the data set and its ground-truth centers (row-major, C x 2).
///
/// Cluster `(i, j)` sits at `(i * spacing, j * spacing)` and emits
/// `samples_per_cluster` isotropic Gaussian points (ziggurat sampling).
/// Bit-reproducible for a fixed spec: each cluster draws from its own
/// seed-derived substream.
pub fn generate_birch(spec: &BirchSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let side = spec.grid_side;
    let c = spec.n_clusters();
    let per = spec.samples_per_cluster;

    let mut centers = Vec::with_capacity(c * 2);
    for i in 0..side {
        for j in 0..side {
            centers.push(i as f64 * spec.spacing);
            centers.push(j as f64 * spec.spacing);
        }
    }

    let stream = RngStream::new(spec.rng_seed);
    let normal = Normal::new(0.0, spec.cluster_sigma_sq.sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut points = vec![0.0f64; c * per * 2];
    points
        .par_chunks_mut(per * 2)
        .enumerate()
        .for_each(|(cluster, block)| {
            let mut rng = stream.fork(cluster as u64).rng();
            let (cx, cy) = (centers[2 * cluster], centers[2 * cluster + 1]);
            for s in 0..per {
                block[2 * s] = cx + normal.sample(&mut rng);
                block[2 * s + 1] = cy + normal.sample(&mut rng);
            }
        });

    Ok((Dataset::new(points, 2)?, centers))
}

/// Input format for [`load_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// Comma-separated values, `.` decimal; a non-numeric first row is
    /// treated as a header and skipped.
    Csv,
    /// Whitespace-separated values, one point per line.
    Whitespace,
}

/// Loads a rectangular numeric matrix as a dataset.
///
/// Blank lines are ignored. Ragged rows, non-numeric fields, and non-finite
/// values are reported with their 1-based file row and column.
pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text, format)
}

fn parse_matrix(text: &str, format: MatrixFormat) -> Result<Dataset> {
    let mut values = Vec::new();
    let mut dims: Option<usize> = None;
    let mut first_content_row = true;

    for (idx, raw) in text.lines().enumerate() {
        let row = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            MatrixFormat::Csv => line.split(',').map(str::trim).collect(),
            MatrixFormat::Whitespace => line.split_whitespace().collect(),
        };

        let mut parsed = Vec::with_capacity(fields.len());
        let mut bad: Option<(usize, String)> = None;
        for (col, field) in fields.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                Ok(v) => {
                    bad = Some((col + 1, format!("non-finite value {v}")));
                    break;
                }
                Err(_) => {
                    bad = Some((col + 1, format!("not a number: {field:?}")));
                    break;
                }
            }
        }

        if let Some((col, msg)) = bad {
            if first_content_row {
                // Header row: skip it.
                first_content_row = false;
                continue;
            }
            return Err(Error::Parse { row, col, msg });
        }
        first_content_row = false;

        match dims {
            None => dims = Some(parsed.len()),
            Some(d) if parsed.len() != d => {
                return Err(Error::Parse {
                    row,
                    col: parsed.len().min(d) + 1,
                    msg: format!("expected {d} columns, found {}", parsed.len()),
                });
            }
            Some(_) => {}
        }
        values.extend_from_slice(&parsed);
    }

    match dims {
        Some(d) => Dataset::new(values, d),
        None => Err(Error::InvalidArgument("no data rows in input".into())),
    }
}

/// Writes a dataset as CSV with shortest-round-trip float formatting, so a
/// reload reproduces the values exactly.
pub fn write_matrix_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    for n in 0..data.n_points() {
        let row = data.point(n);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-dimension z-scoring. Dimensions with zero spread are centered only.
pub fn standardize_columns(data: &Dataset) -> Dataset {
    let (n, d) = (data.n_points(), data.dims());
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (j, v) in data.point(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; d];
    for i in 0..n {
        for (j, v) in data.point(i).iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| {
            let sd = (v / n as f64).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for (j, v) in data.point(i).iter().enumerate() {
            out.push((v - mean[j]) * scale[j]);
        }
    }
    Dataset::new(out, d).expect("standardized data stays finite")
}
