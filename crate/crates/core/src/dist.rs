//! Euclidean distance kernels.
//!
//! [`euclidean_distance`] is the counted public kernel: one call, one tick on
//! the counter. Hot loops inside this crate use the raw kernels and report
//! their evaluation counts to the counter in batches; either way the counter
//! reflects the exact number of distance evaluations performed.

use crate::count::{DistanceCounter, DistanceKind};
use crate::error::{Error, Result};

/// `||a - b||_2`, counted as one evaluation of `kind`.
pub fn euclidean_distance(
    a: &[f64],
    b: &[f64],
    counter: &DistanceCounter,
    kind: DistanceKind,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    counter.add(kind, 1);
    Ok(dist(a, b))
}

/// Uncounted `||a - b||_2`; callers batch their own counter updates.
#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Uncounted squared distance. Only used where a monotone transform of the
/// distance is compared (argmin, thresholds), never where the unsquared
/// value is reported.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}
