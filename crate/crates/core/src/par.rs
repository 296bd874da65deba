//! Thread-count-invariant parallel reductions.
//!
//! Floating-point sums are chunked at a fixed width and the chunk partials
//! are folded in index order, so results are bit-identical whether the work
//! ran on one thread or many.

use rayon::prelude::*;

const CHUNK: usize = 1024;

/// Sum of `f(i)` for `i in 0..n` with a fixed summation order.
pub(crate) fn det_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let start = ci * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut acc = 0.0;
            for i in start..end {
                acc += f(i);
            }
            acc
        })
        .collect();
    partials.into_iter().sum()
}
