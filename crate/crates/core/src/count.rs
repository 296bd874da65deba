//! Counters for distance evaluations.
//!
//! Speedup claims are stated in saved distance evaluations, so every
//! training-time distance computation is tallied here. Counters are atomic:
//! increments commute exactly, so totals are identical regardless of how the
//! work was split across threads.

use std::sync::atomic::{AtomicU64, Ordering};

/// Which kind of distance a kernel call computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// Data point to cluster mean.
    DataCluster,
    /// Cluster mean to cluster mean.
    ClusterCluster,
}

/// Tally of distance evaluations, split by kind.
#[derive(Debug, Default)]
pub struct DistanceCounter {
    data_to_cluster: AtomicU64,
    cluster_to_cluster: AtomicU64,
}

impl DistanceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record `n` evaluations of the given kind.
    #[inline]
    pub fn add(&self, kind: DistanceKind, n: u64) {
        match kind {
            DistanceKind::DataCluster => self.data_to_cluster.fetch_add(n, Ordering::Relaxed),
            DistanceKind::ClusterCluster => {
                self.cluster_to_cluster.fetch_add(n, Ordering::Relaxed)
            }
        };
    }

    pub fn data_to_cluster(&self) -> u64 {
        self.data_to_cluster.load(Ordering::Relaxed)
    }

    pub fn cluster_to_cluster(&self) -> u64 {
        self.cluster_to_cluster.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> DistanceCounts {
        DistanceCounts {
            data_to_cluster: self.data_to_cluster(),
            cluster_to_cluster: self.cluster_to_cluster(),
        }
    }

    pub fn reset(&self) {
        self.data_to_cluster.store(0, Ordering::Relaxed);
        self.cluster_to_cluster.store(0, Ordering::Relaxed);
    }
}

/// A point-in-time copy of a [`DistanceCounter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DistanceCounts {
    pub data_to_cluster: u64,
    pub cluster_to_cluster: u64,
}

impl DistanceCounts {
    /// Evaluations performed since an earlier snapshot.
    pub fn since(&self, earlier: DistanceCounts) -> DistanceCounts {
        DistanceCounts {
            data_to_cluster: self.data_to_cluster - earlier.data_to_cluster,
            cluster_to_cluster: self.cluster_to_cluster - earlier.cluster_to_cluster,
        }
    }
}
