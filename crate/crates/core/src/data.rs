//! Datasets and mixture-model parameters.

use crate::error::{Error, Result};

/// An immutable set of N points in D dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    n_points: usize,
    dims: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer of `len = N * dims` values.
    ///
    /// Rejects empty data, zero dimensions, buffers that are not a whole
    /// number of rows, and non-finite values.
    pub fn new(points: Vec<f64>, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("dims must be >= 1".into()));
        }
        if points.is_empty() || !points.len().is_multiple_of(dims) {
            return Err(Error::InvalidArgument(format!(
                "point buffer of length {} is not a positive multiple of dims {}",
                points.len(),
                dims
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                i / dims,
                i % dims
            )));
        }
        let n_points = points.len() / dims;
        Ok(Self {
            points,
            n_points,
            dims,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn point(&self, n: usize) -> &[f64] {
        &self.points[n * self.dims..(n + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }
}

/// C cluster means plus one shared isotropic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    means: Vec<f64>,
    n_clusters: usize,
    dims: usize,
    sigma_sq: f64,
}

impl ModelParams {
    /// Builds parameters from a row-major `C x dims` mean buffer.
    pub fn new(means: Vec<f64>, dims: usize, sigma_sq: f64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("dims must be >= 1".into()));
        }
        if means.is_empty() || !means.len().is_multiple_of(dims) {
            return Err(Error::InvalidArgument(format!(
                "mean buffer of length {} is not a positive multiple of dims {}",
                means.len(),
                dims
            )));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "mean coordinates must be finite".into(),
            ));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq must be positive and finite, got {sigma_sq}"
            )));
        }
        let n_clusters = means.len() / dims;
        Ok(Self {
            means,
            n_clusters,
            dims,
            sigma_sq,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    #[inline]
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dims..(c + 1) * self.dims]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}
