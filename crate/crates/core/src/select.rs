//! Unordered partial selection of the k smallest entries.
//!
//! Introselect: quickselect with median-of-three pivoting and a depth budget
//! that falls back to a full sort. Pivoting is deterministic, so selection
//! output depends only on the input. Ties are broken toward the smaller key,
//! which keeps every selection in this crate reproducible.

use std::cmp::Ordering;

type Entry = (usize, f64);

/// Total order on (key, distance) pairs: by distance, then by key.
/// Distances are finite or `+inf` sentinels, never NaN.
#[inline]
fn cmp(a: &Entry, b: &Entry) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

#[inline]
fn less(a: &Entry, b: &Entry) -> bool {
    cmp(a, b) == Ordering::Less
}

/// Reorders `entries` so that the `min(k, len)` smallest occupy the front
/// (in no particular order) and returns that count.
pub fn partition_k_smallest(entries: &mut [Entry], k: usize) -> usize {
    let k = k.min(entries.len());
    if k == 0 || k == entries.len() {
        return k;
    }
    let budget = 2 * (usize::BITS - entries.len().leading_zeros()) + 2;
    introselect(entries, k, budget);
    k
}

/// The keys of the `min(k, len)` smallest distances; order unspecified.
pub fn select_k_smallest(entries: &[Entry], k: usize) -> Vec<usize> {
    let mut buf = entries.to_vec();
    let k = partition_k_smallest(&mut buf, k);
    buf[..k].iter().map(|e| e.0).collect()
}

fn introselect(mut v: &mut [Entry], mut k: usize, mut budget: u32) {
    while v.len() > 1 && k > 0 && k < v.len() {
        if budget == 0 {
            v.sort_unstable_by(cmp);
            return;
        }
        budget -= 1;
        let p = partition(v, median_of_three(v));
        match k.cmp(&p) {
            Ordering::Equal => return,
            Ordering::Less => v = &mut v[..p],
            Ordering::Greater => {
                k -= p + 1;
                v = &mut v[p + 1..];
            }
        }
    }
}

fn median_of_three(v: &[Entry]) -> usize {
    let (a, b, c) = (0, v.len() / 2, v.len() - 1);
    if less(&v[a], &v[b]) {
        if less(&v[b], &v[c]) {
            b
        } else if less(&v[a], &v[c]) {
            c
        } else {
            a
        }
    } else if less(&v[a], &v[c]) {
        a
    } else if less(&v[b], &v[c]) {
        c
    } else {
        b
    }
}

/// Lomuto partition around the pivot at `pivot_idx`; returns the pivot's
/// final position.
fn partition(v: &mut [Entry], pivot_idx: usize) -> usize {
    let last = v.len() - 1;
    v.swap(pivot_idx, last);
    let pivot = v[last];
    let mut store = 0;
    for i in 0..last {
        if less(&v[i], &pivot) {
            v.swap(i, store);
            store += 1;
        }
    }
    v.swap(store, last);
    store
}
