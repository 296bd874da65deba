//! Full EM for the isotropic equal-weight Gaussian mixture, plus the
//! log-likelihood and the truncated free energy shared by every variant.
//!
//! The model is a mixture of C equally weighted isotropic Gaussians with a
//! single shared variance. Responsibilities are softmaxes of
//! `-d^2 / (2 sigma^2)` with max-shift stabilization; the M-step is the
//! weighted-mean update plus the pooled variance update, and is reused
//! unchanged by the truncated variants (only the responsibilities change).

use rayon::prelude::*;

use crate::count::{DistanceCounter, DistanceKind};
use crate::data::{Dataset, ModelParams};
use crate::dist::sq_dist;
use crate::error::{Error, Result};
use crate::par::det_sum;

/// Lower bound on the shared variance; prevents degenerate collapse.
pub const SIGMA_SQ_FLOOR: f64 = 1e-8;

/// Sparse per-point cluster weights. Each point carries weight only on its
/// truncation set; full EM carries weight on every cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    weights: Vec<Vec<(usize, f64)>>,
}

impl Responsibilities {
    pub fn from_weights(weights: Vec<Vec<(usize, f64)>>) -> Self {
        Self { weights }
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    /// `(cluster, weight)` pairs for point `n`; weights sum to 1.
    pub fn point(&self, n: usize) -> &[(usize, f64)] {
        &self.weights[n]
    }

    /// The support set of every point, in stored order.
    pub fn support_sets(&self) -> Vec<Vec<usize>> {
        self.weights
            .iter()
            .map(|w| w.iter().map(|&(c, _)| c).collect())
            .collect()
    }
}

/// Full E-step: softmax responsibilities over all C clusters.
///
/// Counts `N * C` data-to-cluster evaluations.
pub fn full_estep(
    data: &Dataset,
    params: &ModelParams,
    counter: &DistanceCounter,
) -> Responsibilities {
    let c = params.n_clusters();
    let inv_two_sigma_sq = 1.0 / (2.0 * params.sigma_sq());
    let weights: Vec<Vec<(usize, f64)>> = (0..data.n_points())
        .into_par_iter()
        .map(|n| {
            let y = data.point(n);
            let mut entries: Vec<(usize, f64)> = (0..c)
                .map(|k| (k, -sq_dist(y, params.mean(k)) * inv_two_sigma_sq))
                .collect();
            normalize_softmax(&mut entries);
            entries
        })
        .collect();
    counter.add(
        DistanceKind::DataCluster,
        (data.n_points() * c) as u64,
    );
    Responsibilities { weights }
}

/// Hard E-step: all weight on the nearest cluster (ties to the smaller
/// cluster index). This is the C'=1 full-search step of standard k-means.
///
/// Counts `N * C` data-to-cluster evaluations.
pub fn hard_estep(
    data: &Dataset,
    params: &ModelParams,
    counter: &DistanceCounter,
) -> Responsibilities {
    let c = params.n_clusters();
    let weights: Vec<Vec<(usize, f64)>> = (0..data.n_points())
        .into_par_iter()
        .map(|n| {
            let y = data.point(n);
            let mut best = (0usize, sq_dist(y, params.mean(0)));
            for k in 1..c {
                let d = sq_dist(y, params.mean(k));
                if d < best.1 {
                    best = (k, d);
                }
            }
            vec![(best.0, 1.0)]
        })
        .collect();
    counter.add(
        DistanceKind::DataCluster,
        (data.n_points() * c) as u64,
    );
    Responsibilities { weights }
}

/// In-place max-shift softmax over `(cluster, exponent)` entries.
pub(crate) fn normalize_softmax(entries: &mut [(usize, f64)]) {
    let max = entries
        .iter()
        .map(|e| e.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for e in entries.iter_mut() {
        e.1 = (e.1 - max).exp();
        total += e.1;
    }
    for e in entries.iter_mut() {
        e.1 /= total;
    }
}

/// M-step: weighted means and the pooled isotropic variance.
///
/// Clusters with zero total responsibility keep their previous mean; the
/// variance is floored at [`SIGMA_SQ_FLOOR`].
pub fn mstep(data: &Dataset, resp: &Responsibilities, prev: &ModelParams) -> ModelParams {
    let (c, d) = (prev.n_clusters(), prev.dims());
    let n = data.n_points();
    debug_assert_eq!(resp.n_points(), n);

    let mut sums = vec![0.0f64; c * d];
    let mut mass = vec![0.0f64; c];
    for i in 0..n {
        let y = data.point(i);
        for &(k, s) in resp.point(i) {
            mass[k] += s;
            let row = &mut sums[k * d..(k + 1) * d];
            for (acc, v) in row.iter_mut().zip(y) {
                *acc += s * v;
            }
        }
    }

    let mut means = vec![0.0f64; c * d];
    for k in 0..c {
        let row = &mut means[k * d..(k + 1) * d];
        if mass[k] > 0.0 {
            for (j, m) in row.iter_mut().enumerate() {
                *m = sums[k * d + j] / mass[k];
            }
        } else {
            row.copy_from_slice(prev.mean(k));
        }
    }
    let next = ModelParams::new(means, d, 1.0).expect("means stay finite");

    let ss = det_sum(n, |i| {
        let y = data.point(i);
        resp.point(i)
            .iter()
            .map(|&(k, s)| s * sq_dist(y, next.mean(k)))
            .sum()
    });
    let sigma_sq = (ss / (d as f64 * n as f64)).max(SIGMA_SQ_FLOOR);
    ModelParams::new(next.means().to_vec(), d, sigma_sq).expect("valid params")
}

/// Per-point log normalization constant `log(1/C) - D/2 * log(2 pi sigma^2)`.
#[inline]
fn log_norm_const(params: &ModelParams) -> f64 {
    -(params.n_clusters() as f64).ln()
        - 0.5 * params.dims() as f64 * (2.0 * std::f64::consts::PI * params.sigma_sq()).ln()
}

/// Data log-likelihood under the mixture, via log-sum-exp.
pub fn log_likelihood(data: &Dataset, params: &ModelParams) -> f64 {
    let c = params.n_clusters();
    let inv_two_sigma_sq = 1.0 / (2.0 * params.sigma_sq());
    let base = log_norm_const(params);
    det_sum(data.n_points(), |n| {
        let y = data.point(n);
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            max = max.max(-sq_dist(y, params.mean(k)) * inv_two_sigma_sq);
        }
        let mut total = 0.0;
        for k in 0..c {
            total += (-sq_dist(y, params.mean(k)) * inv_two_sigma_sq - max).exp();
        }
        base + max + total.ln()
    })
}

/// Truncated free energy: the log joint mass restricted to each point's
/// truncation set. Coincides with the log-likelihood when every set covers
/// all clusters, and never exceeds it otherwise.
pub fn truncated_free_energy(
    data: &Dataset,
    sets: &[Vec<usize>],
    params: &ModelParams,
) -> Result<f64> {
    if sets.len() != data.n_points() {
        return Err(Error::InvalidState(format!(
            "{} truncation sets for {} points",
            sets.len(),
            data.n_points()
        )));
    }
    let c = params.n_clusters();
    for (n, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidState(format!(
                "empty truncation set for point {n}"
            )));
        }
        if set.iter().any(|&k| k >= c) {
            return Err(Error::InvalidState(format!(
                "truncation set for point {n} references a cluster >= {c}"
            )));
        }
    }
    let inv_two_sigma_sq = 1.0 / (2.0 * params.sigma_sq());
    let base = log_norm_const(params);
    Ok(det_sum(data.n_points(), |n| {
        let y = data.point(n);
        let set = &sets[n];
        let mut max = f64::NEG_INFINITY;
        for &k in set {
            max = max.max(-sq_dist(y, params.mean(k)) * inv_two_sigma_sq);
        }
        let mut total = 0.0;
        for &k in set {
            total += (-sq_dist(y, params.mean(k)) * inv_two_sigma_sq - max).exp();
        }
        base + max + total.ln()
    }))
}

/// Variance for freshly seeded means: the mean squared distance to the
/// nearest mean, divided by the dimensionality. Keeps the first E-step
/// responsibilities well scaled.
pub fn initial_sigma_sq(data: &Dataset, params: &ModelParams) -> f64 {
    let c = params.n_clusters();
    let total = det_sum(data.n_points(), |n| {
        let y = data.point(n);
        let mut best = f64::INFINITY;
        for k in 0..c {
            best = best.min(sq_dist(y, params.mean(k)));
        }
        best
    });
    (total / (data.n_points() as f64 * data.dims() as f64)).max(SIGMA_SQ_FLOOR)
}
